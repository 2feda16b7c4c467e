// Records a short persona-evolution session against the loopback fake
// service, for the shipped replay fixture:
//   record_live_session tests/fixtures/live_session
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "../../tools/cli.hpp"
#include "fake_service.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: record_live_session <out-dir>\n";
    return 1;
  }
  const std::filesystem::path out = argv[1];
  std::filesystem::remove_all(out);

  testsupport::FakeService service;
  // The fake service ignores the key; record mode only insists one is set.
  setenv("OPENAI_API_KEY", "sk-loopback-not-a-secret", 1);
  const int rc = normsgame::cli::run_cli({"evolve",
                                          "--experiment", "persona-evolution",
                                          "--gateway-mode", "record",
                                          "--endpoint", service.base_url(),
                                          "--trials", "1",
                                          "--epochs", "2",
                                          "--rounds-per-epoch", "2",
                                          "--pool-size", "8",
                                          "--seed", "11",
                                          "--out", out.string()},
                                         std::cout, std::cerr);
  std::cout << service.requests() << " requests served\n";
  return rc;
}
