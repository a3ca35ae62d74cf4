#pragma once

namespace triggerlab {

/// Entry point behind the `triggerlab` binary. Subcommands: synth-data,
/// train-clean, make-campaign, reconstruct, score, verify, report; each
/// takes --config <path>. Returns 0 on success, 1 on a domain error
/// (message names the failing stage), 2 on a usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace triggerlab
