#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "biosed/common.hpp"
#include "biosed/labelgrid.hpp"
#include "biosed/manifest.hpp"

namespace biosed::eval {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

struct ConfusionReport {
  std::vector<ConfusionCounts> per_species;
  ConfusionCounts pooled;  // micro: summed over species
};

/// Precision/recall/F1 carry no value when their denominator is zero (the
/// undefined-marker, rendered as an em dash); accuracy is always defined for
/// non-empty counts.
struct MetricSet {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  double accuracy = 0.0;
};

/// cell = 1 iff prob >= threshold.
MatU8 binarize(const MatF& probs, double threshold);

ConfusionReport confusion(const MatU8& pred, const MatU8& truth);

MetricSet metrics(const ConfusionCounts& counts);

struct SweepPoint {
  double threshold = 0.0;
  MetricSet pooled;
};

struct SweepCurve {
  std::vector<SweepPoint> points;
  double best_f1 = 0.0;
  double best_threshold = 0.0;  // lowest threshold attaining best_f1
};

SweepCurve sweep(const MatF& probs, const MatU8& truth,
                 const std::vector<double>& thresholds);

/// The default Fig.-8-style grid: 101 thresholds, 0.00 to 1.00 step 0.01.
std::vector<double> default_threshold_grid();

struct RecordingEval {
  std::vector<MetricSet> per_species;
  MetricSet pooled;
  ConfusionReport counts;
};

/// Segment-level metrics for one recording: truth events are rasterized to
/// the per-second grid with the same species list, predictions binarized at
/// `threshold`.
RecordingEval evaluate_recording(const MatF& probs,
                                 const labelgrid::LabelTrack& truth,
                                 const SpeciesList& species, double threshold);

/// One row per species plus a pooled row. Undefined metrics are rendered as
/// an em dash unless coerce_zeros is set.
void write_metrics_csv(const std::filesystem::path& path,
                       const RecordingEval& ev, const SpeciesList& species,
                       bool coerce_zeros = false);
void write_metrics_json(const std::filesystem::path& path,
                        const RecordingEval& ev, const SpeciesList& species);

/// threshold,precision,recall,f1,accuracy rows.
void write_sweep_csv(const std::filesystem::path& path,
                     const SweepCurve& curve);

}  // namespace biosed::eval
