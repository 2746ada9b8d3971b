#pragma once

namespace dac::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIntegrity = 3;
inline constexpr int kExitDivergence = 4;

int run(int argc, char** argv);

}  // namespace dac::cli
