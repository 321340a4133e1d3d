// Minimal protocol trial: reads parameters "a" and "b", reports three
// intermediates converging to the toy objective and then the final value.
//
// Optional env: TOY_SLEEP_MS (pause before each report), TOY_EXIT_CODE
// (exit with this code right after reading parameters).

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "spikehpo/protocol.hpp"
#include "toy_objective.hpp"

int main() {
  try {
    spikehpo::TrialClient client(spikehpo::context_from_env());
    const auto& params = client.get_next_parameter();
    const double a = spikehpo::as_double(params.at("a"));
    const double b = spikehpo::as_double(params.at("b"));
    if (const char* code = std::getenv("TOY_EXIT_CODE")) return std::atoi(code);
    int sleep_ms = 0;
    if (const char* s = std::getenv("TOY_SLEEP_MS")) sleep_ms = std::atoi(s);

    const double f = toy::objective(a, b);
    for (int k = 1; k <= 3; ++k) {
      std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
      client.report_intermediate_result({{"default", f - 1.0 / k}});
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
    client.report_final_result({{"default", f}});
    std::cout << "a=" << a << " b=" << b << " f=" << f << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "toy_trial: " << e.what() << '\n';
    return 2;
  }
}
