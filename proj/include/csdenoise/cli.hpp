#pragma once

namespace csd {

// exit codes: 0 success, 1 runtime failure, 2 input validation failure
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

int cli_main(int argc, const char* const* argv);

}  // namespace csd
