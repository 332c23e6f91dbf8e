#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adreg/affine.hpp"
#include "adreg/field_ops.hpp"
#include "adreg/volume.hpp"

namespace adreg {

/// Sampling ranges for the analytic probe-indentation deformation model that
/// stands in for patient-specific finite-element simulation. A virtual probe
/// with an acoustic coupling balloon indents the gland from a randomly drawn
/// entry direction; the displacement is a smooth radial push decaying with
/// distance, attenuated inside the gland by a stiffness contrast, tapered to
/// zero at the domain boundary.
struct SurrogateConfig {
  double probe_radius_min = 4.0, probe_radius_max = 8.0;  // mm
  double balloon_min = 0.0, balloon_max = 4.0;            // mm inflation
  double indent_min = 2.0, indent_max = 8.0;              // mm
  double entry_cone_deg = 30.0;                           // around the -y axis
  double gland_semiaxis_min = 9.0, gland_semiaxis_max = 14.0;  // mm
  double stiffness_min = 0.3, stiffness_max = 0.9;  // gland motion attenuation
  Grid3 grid = Grid3::isotropic(32, 2.0);
  std::uint64_t seed = 0;

  void validate() const;
};

/// One surrogate deformation: a resampling-convention field plus the gland
/// label in the deformed configuration, with full provenance.
struct SimSample {
  DisplacementField field;
  LabelMap gland;  // deformed configuration, binary
  std::uint64_t seed = 0;
  std::vector<double> drawn;  // [semi-axes(3), center(3), R, balloon, indent, dir(3), stiffness]
};

struct NormStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stdev{1, 1, 1};
  std::int64_t count = 0;
};

SimSample simulate_probe_deformation(const SurrogateConfig& cfg, std::uint64_t seed);

/// Preparation pipeline for one simulated sample: (1) draw a fixed gland
/// from the pool, (2) resample the field into its field of view by matching
/// deformed-gland bounding boxes, (3) compose with a random affine, (4)
/// remove the affine component, (5) normalize with frozen stats when given.
DisplacementField prep_sim_sample(const SimSample& s, const std::vector<LabelMap>& fixed_gland_pool,
                                  const Grid3& train_grid, std::uint64_t seed,
                                  const AffineRanges& aug, const NormStats* stats = nullptr);

/// Componentwise mean/std over all voxels of all fields (population std).
/// Throws if any component has zero variance or fewer than 2 fields.
NormStats compute_norm_stats(const std::vector<DisplacementField>& prepared);

void apply_norm_stats(DisplacementField& d, const NormStats& stats);

void save_norm_stats(const NormStats& s, const std::string& path);
NormStats load_norm_stats(const std::string& path);

// ---- synthetic phantom cases ------------------------------------------

struct PhantomConfig {
  Grid3 grid = Grid3::isotropic(32, 2.0);
  SurrogateConfig deform;     // ground-truth deformation draws
  AffineRanges global_aff;    // ground-truth global affine range
  int num_landmarks = 3;
  double landmark_radius_mm = 3.0;
  bool zero_deformation = false;  // geometry-identical pair (texture only)

  void validate() const;
};

/// Synthetic multimodal pair: an "MR-like" moving volume with gland +
/// landmark labels, a "TRUS-like" fixed volume produced by warping with a
/// known composed field and re-texturing with modality-specific speckle.
struct PhantomCase {
  Volume moving, fixed;
  LabelMap moving_gland, fixed_gland;
  std::vector<LabelMap> moving_landmarks, fixed_landmarks;
  DisplacementField gt_field;
  std::uint64_t seed = 0;
};

PhantomCase generate_phantom_case(std::uint64_t seed, const PhantomConfig& cfg);

// ---- dataset layout ------------------------------------------------------
// cases/<id>/{moving,fixed,moving_gland,fixed_gland,moving_landmark_<m>,
//             fixed_landmark_<m>,gt_field}.vol     + manifest.txt
// sims/<patient>/<k>.vol (normalized local fields) + norm_stats + manifest.txt

struct Manifest {
  std::string kind;  // "cases" or "sims"
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::string> ids;

  void save(const std::string& path) const;
  static Manifest load(const std::string& path);
};

std::vector<std::string> write_phantom_dataset(const std::string& dir, int cases,
                                               std::uint64_t seed, const PhantomConfig& cfg);
PhantomCase load_phantom_case(const std::string& dir, const std::string& id);

struct SimDatasetResult {
  int written = 0;
  NormStats stats;
};
SimDatasetResult write_sim_dataset(const std::string& dir, const std::string& cases_dir,
                                   int patients, int per_patient, std::uint64_t seed,
                                   const SurrogateConfig& cfg, const AffineRanges& aug,
                                   const Grid3& train_grid);
std::vector<DisplacementField> load_sim_dataset(const std::string& dir);

std::uint64_t hash_config_text(const std::string& canonical_text);

}  // namespace adreg
