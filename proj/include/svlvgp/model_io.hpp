#pragma once

#include <optional>
#include <string>

#include "svlvgp/training.hpp"

namespace svlvgp {

// A trained model plus everything needed to reproduce its predictions:
// the family tag selects which payload is engaged. Prediction from an
// artifact never needs the original dataset files.
struct ModelArtifact {
  static constexpr int current_format_version = 1;

  int format_version = current_format_version;
  std::string family;  // exact | sv | lmc-sv-shared | lmc-sv-independent
  std::optional<ExactModel> exact;
  std::optional<SVModel> sv;
  std::optional<MultiSVModel> lmc;
  TrainConfig train;
  std::string rng_algorithm;
  TrainingTrace trace_summary;  // downsampled to <= 256 rows, wall seconds dropped

  const MixedSchema& schema() const;
  const Normalization& norm() const;
  int n_outputs() const;
  void validate() const;
};

ModelArtifact make_artifact(ExactModel model, const TrainConfig& cfg, const TrainingTrace& trace);
ModelArtifact make_artifact(SVModel model, const TrainConfig& cfg, const TrainingTrace& trace);
ModelArtifact make_artifact(MultiSVModel model, const TrainConfig& cfg,
                            const TrainingTrace& trace);

struct PredictOutput {
  MatrixXd mean;  // rows x outputs, original units
  MatrixXd var;   // rows x outputs, noise excluded
};
PredictOutput artifact_predict(const ModelArtifact& artifact, const MatrixXd& Xq,
                               const MatrixXi& Tq);

// Canonical serialization: sorted keys, shortest round-trip numbers. Two
// artifacts are byte-equal iff their canonical forms are.
std::string artifact_to_json(const ModelArtifact& artifact);
ModelArtifact artifact_from_json(const std::string& text);

void save_artifact(const ModelArtifact& artifact, const std::string& path);
ModelArtifact load_artifact(const std::string& path);

// 16 deterministic probe queries derived from the schema and normalization
// record; used to certify that serialization preserves behavior bit-exactly.
void probe_queries(const MixedSchema& schema, const Normalization& norm, MatrixXd& Xq,
                   MatrixXi& Tq);
PredictOutput run_probes(const ModelArtifact& artifact);

// Loads, re-serializes, byte-compares canonical forms, and compares the 16
// probe predictions bit-exactly. Returns a short report; throws
// RoundTripMismatch naming the first divergence.
std::string roundtrip_verify(const std::string& path);

TrainingTrace summarize_trace(const TrainingTrace& trace, int max_rows = 256);

}  // namespace svlvgp
