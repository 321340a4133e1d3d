#pragma once

// Minimal POSIX child-process supervision for trial commands.

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "spikehpo/errors.hpp"

namespace spikehpo {

struct SpawnRequest {
  std::string command;  // run through /bin/sh -c
  std::filesystem::path cwd;
  std::vector<std::pair<std::string, std::string>> env;  // added to the inherited environment
  std::filesystem::path stdout_file;
  std::filesystem::path stderr_file;
};

/// Starts the command in its own process group. Returns the child pid.
inline pid_t spawn(const SpawnRequest& req) {
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    for (const auto& [k, v] : req.env) ::setenv(k.c_str(), v.c_str(), 1);
    auto redirect = [](const std::filesystem::path& p, int target) {
      if (p.empty()) return;
      const int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
      if (fd >= 0) {
        ::dup2(fd, target);
        ::close(fd);
      }
    };
    redirect(req.stdout_file, STDOUT_FILENO);
    redirect(req.stderr_file, STDERR_FILENO);
    if (!req.cwd.empty() && ::chdir(req.cwd.c_str()) != 0) {
      const char msg[] = "spikehpo: cannot enter trial code directory\n";
      [[maybe_unused]] auto n = ::write(STDERR_FILENO, msg, sizeof(msg) - 1);
      ::_exit(127);
    }
    ::execl("/bin/sh", "sh", "-c", req.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  return pid;
}

/// Non-blocking reap. Exit code, or 128 + signal number when killed.
inline std::optional<int> try_wait(pid_t pid) {
  int status = 0;
  const pid_t r = ::waitpid(pid, &status, WNOHANG);
  if (r == 0) return std::nullopt;
  if (r < 0) return 255;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return 255;
}

inline bool process_group_alive(pid_t pgid) { return ::kill(-pgid, 0) == 0; }

/// SIGTERM to the process group, SIGKILL after `grace`, then reap if it is
/// our child.
inline void terminate_group(pid_t pid, std::chrono::milliseconds grace = std::chrono::milliseconds(2000)) {
  ::kill(-pid, SIGTERM);
  const auto deadline = std::chrono::steady_clock::now() + grace;
  while (std::chrono::steady_clock::now() < deadline) {
    if (try_wait(pid).has_value()) {
      ::kill(-pid, SIGKILL);  // stragglers in the group
      return;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ::kill(-pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
}

inline std::filesystem::path self_executable_dir() {
  std::error_code ec;
  const auto exe = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::filesystem::path{} : exe.parent_path();
}

}  // namespace spikehpo
