#pragma once

#include <string>
#include <vector>

#include "svlvgp/data.hpp"
#include "svlvgp/rng.hpp"

namespace svlvgp {

enum class LatentStructure { Shared, Independent };

// Learned latent vectors for every categorical level. z[copy][j] is an
// l_j x g matrix whose row c-1 is z_{j,{copy}}(c). Shared structure stores
// one copy; Independent stores one per latent function.
struct LatentMap {
  int g = 2;
  LatentStructure structure = LatentStructure::Shared;
  std::vector<std::vector<MatrixXd>> z;

  int copies() const { return static_cast<int>(z.size()); }
  int vars() const { return z.empty() ? 0 : static_cast<int>(z[0].size()); }
  // Width of an encoded row: p + q*g.
  int encoded_width(const MixedSchema& schema) const { return schema.p + schema.q * g; }

  // Coordinates ~ uniform(-0.5, 0.5).
  static LatentMap random(const MixedSchema& schema, int g, LatentStructure structure,
                          int copies, SeededRng& rng);
  void validate(const MixedSchema& schema) const;
};

// Rows [x_i ; z_1(t_i1) ; ... ; z_q(t_iq)] for the given latent-function copy.
MatrixXd encode_rows(const MatrixXd& X, const MatrixXi& T, const MixedSchema& schema,
                     const LatentMap& map, int copy);
MatrixXd encode_points(const std::vector<MixedPoint>& points, const MixedSchema& schema,
                       const LatentMap& map, int copy);

// Removes the rigid-motion gauge freedom for g = 2: per variable and copy,
// level 1 goes to the origin, level 2 onto the nonnegative first axis, and a
// reflection makes the first off-axis level's second coordinate nonnegative.
// Pairwise distances (hence kernel values) are preserved. Variables whose
// first two levels coincide, and maps with g != 2, pass through unchanged.
// Applied at export/report time only, never mid-optimization.
LatentMap canonicalize(const LatentMap& map);

struct CollinearityReport {
  double explained_fraction = 0.0;  // share of variance on the first principal axis
  std::vector<int> ordering;        // 1-based levels sorted along that axis
  bool flipped = false;             // axis sign was flipped to canonicalize the ordering
};

// How close the levels of variable j (1-based) lie to a straight line, and in
// what order they fall along it. The axis sign is fixed so the first listed
// level index is smaller than the last, with `flipped` recording the flip.
CollinearityReport collinearity_report(const LatentMap& map, int variable, int copy);

// CSV with columns variable, level, label, copy, z_1..z_g.
void write_latent_csv(const LatentMap& map, const MixedSchema& schema, const std::string& path);

}  // namespace svlvgp
