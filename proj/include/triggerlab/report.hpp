#pragma once

#include <optional>
#include <string>

#include "triggerlab/poisoning.hpp"
#include "triggerlab/scoring.hpp"

namespace triggerlab {

/// Per-model walkthrough artifacts under `out_dir`:
///   model_NN_injection.svg  clean vs poisoned series around the first pair
///   model_NN_forecast.svg   forecasts with and without the trigger
///   model_NN_overlay.svg    ground truth vs candidate (submission only)
///   summary.csv             verification ratios and, with a submission,
///                           the same per-trigger scores the scorer reports
void generate_report(const CampaignManifest& manifest, const TelemetrySeries& clean_series,
                     const Submission* submission, const std::string& out_dir,
                     RangeMode mode = RangeMode::global);

}  // namespace triggerlab
