#include "biosed/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace biosed::eval {

MatU8 binarize(const MatF& probs, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("eval.threshold: must be in [0, 1]");
  }
  MatU8 out(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    out.data[i] = static_cast<double>(probs.data[i]) >= threshold ? 1 : 0;
  }
  return out;
}

ConfusionReport confusion(const MatU8& pred, const MatU8& truth) {
  if (!pred.same_shape(truth)) {
    throw DataError("confusion: prediction is " + std::to_string(pred.rows) +
                    "x" + std::to_string(pred.cols) + ", truth is " +
                    std::to_string(truth.rows) + "x" +
                    std::to_string(truth.cols));
  }
  ConfusionReport report;
  report.per_species.resize(pred.cols);
  for (std::size_t t = 0; t < pred.rows; ++t) {
    for (std::size_t c = 0; c < pred.cols; ++c) {
      auto& cc = report.per_species[c];
      const bool p = pred(t, c) != 0;
      const bool y = truth(t, c) != 0;
      if (p && y) ++cc.tp;
      else if (p && !y) ++cc.fp;
      else if (!p && y) ++cc.fn;
      else ++cc.tn;
    }
  }
  for (const auto& cc : report.per_species) report.pooled += cc;
  return report;
}

MetricSet metrics(const ConfusionCounts& c) {
  MetricSet m;
  if (c.tp + c.fp > 0) {
    m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn > 0) {
    m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  if (c.total() > 0) {
    m.accuracy =
        static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  }
  return m;
}

SweepCurve sweep(const MatF& probs, const MatU8& truth,
                 const std::vector<double>& thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) {
      throw ConfigError("eval.thresholds: must be strictly increasing");
    }
  }
  SweepCurve curve;
  curve.best_f1 = -1.0;
  for (double tau : thresholds) {
    SweepPoint pt;
    pt.threshold = tau;
    pt.pooled = metrics(confusion(binarize(probs, tau), truth).pooled);
    if (pt.pooled.f1 && *pt.pooled.f1 > curve.best_f1) {
      curve.best_f1 = *pt.pooled.f1;
      curve.best_threshold = tau;
    }
    curve.points.push_back(pt);
  }
  if (curve.best_f1 < 0.0) curve.best_f1 = 0.0;
  return curve;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid(101);
  for (int i = 0; i <= 100; ++i) grid[static_cast<std::size_t>(i)] = i / 100.0;
  return grid;
}

RecordingEval evaluate_recording(const MatF& probs,
                                 const labelgrid::LabelTrack& truth,
                                 const SpeciesList& species,
                                 double threshold) {
  if (probs.cols != static_cast<std::size_t>(species.count())) {
    throw DataError("evaluate: probability matrix has " +
                    std::to_string(probs.cols) + " columns, species list " +
                    std::to_string(species.count()));
  }
  labelgrid::LabelTrack clipped = truth;
  clipped.recording_duration_s = static_cast<double>(probs.rows);
  const MatU8 truth_m = labelgrid::to_segment_matrix(clipped, species.count());
  const MatU8 pred = binarize(probs, threshold);

  RecordingEval ev;
  ev.counts = confusion(pred, truth_m);
  for (const auto& cc : ev.counts.per_species) {
    ev.per_species.push_back(metrics(cc));
  }
  ev.pooled = metrics(ev.counts.pooled);
  return ev;
}

namespace {

std::string fmt_metric(const std::optional<double>& v, bool coerce_zeros) {
  if (!v) return coerce_zeros ? "0.000000" : "—";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const RecordingEval& ev, const SpeciesList& species,
                       bool coerce_zeros) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("eval: cannot write " + path.string());
  out << "species,tp,fp,fn,tn,precision,recall,f1,accuracy\n";
  char buf[64];
  for (std::size_t c = 0; c < ev.per_species.size(); ++c) {
    const auto& cc = ev.counts.per_species[c];
    const auto& m = ev.per_species[c];
    out << species.entries[c].common_name << ',' << cc.tp << ',' << cc.fp
        << ',' << cc.fn << ',' << cc.tn << ','
        << fmt_metric(m.precision, coerce_zeros) << ','
        << fmt_metric(m.recall, coerce_zeros) << ','
        << fmt_metric(m.f1, coerce_zeros) << ',';
    std::snprintf(buf, sizeof buf, "%.6f\n", m.accuracy);
    out << buf;
  }
  const auto& pc = ev.counts.pooled;
  out << "POOLED," << pc.tp << ',' << pc.fp << ',' << pc.fn << ',' << pc.tn
      << ',' << fmt_metric(ev.pooled.precision, coerce_zeros) << ','
      << fmt_metric(ev.pooled.recall, coerce_zeros) << ','
      << fmt_metric(ev.pooled.f1, coerce_zeros) << ',';
  std::snprintf(buf, sizeof buf, "%.6f\n", ev.pooled.accuracy);
  out << buf;
}

namespace {

nlohmann::json metric_json(const MetricSet& m, const ConfusionCounts& c) {
  nlohmann::json j;
  j["tp"] = c.tp;
  j["fp"] = c.fp;
  j["fn"] = c.fn;
  j["tn"] = c.tn;
  if (m.precision) j["precision"] = *m.precision; else j["precision"] = nullptr;
  if (m.recall) j["recall"] = *m.recall; else j["recall"] = nullptr;
  if (m.f1) j["f1"] = *m.f1; else j["f1"] = nullptr;
  j["accuracy"] = m.accuracy;
  return j;
}

}  // namespace

void write_metrics_json(const std::filesystem::path& path,
                        const RecordingEval& ev, const SpeciesList& species) {
  nlohmann::json j;
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < ev.per_species.size(); ++c) {
    per[species.entries[c].common_name] =
        metric_json(ev.per_species[c], ev.counts.per_species[c]);
  }
  j["per_species"] = per;
  j["pooled"] = metric_json(ev.pooled, ev.counts.pooled);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("eval: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_sweep_csv(const std::filesystem::path& path,
                     const SweepCurve& curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("eval: cannot write " + path.string());
  out << "threshold,precision,recall,f1,accuracy\n";
  char buf[160];
  for (const auto& pt : curve.points) {
    std::snprintf(buf, sizeof buf, "%.2f,%s,%s,%s,%.6f\n", pt.threshold,
                  fmt_metric(pt.pooled.precision, false).c_str(),
                  fmt_metric(pt.pooled.recall, false).c_str(),
                  fmt_metric(pt.pooled.f1, false).c_str(),
                  pt.pooled.accuracy);
    out << buf;
  }
}

}  // namespace biosed::eval
