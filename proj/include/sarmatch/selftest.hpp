#pragma once

namespace sarmatch {

// Compact oracle and gradient checks (FFT vs direct DFT, FFT-NCC vs naive,
// linear attention vs quadratic form, MI sanity, finite-difference gradients).
// Prints one line per check; returns 0 when everything passes.
int run_selftest(bool verbose = true);

}  // namespace sarmatch
