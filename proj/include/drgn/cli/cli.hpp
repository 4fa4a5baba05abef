#pragma once

namespace drgn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

// `drgn train|augment|enhance|evaluate ...`; returns the process exit code.
int run(int argc, char** argv);

}  // namespace drgn::cli
