// Mask representations over the structured editing slots and the algebra on
// them: sigmoid relaxation, hard thresholding, averaging, IoU and sparsity.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace vedit {

enum class MaskSource { kHypernetwork, kAuxiliary, kAverage, kExternal };

/// Real-valued map, one entry per slot (num FC layers x intermediate width).
struct ContinuousMask {
  std::vector<double> values;
  MaskSource source = MaskSource::kExternal;

  std::size_t size() const { return values.size(); }
};

/// Sigmoid(k * m); every entry lies strictly inside (0, 1) for finite m.
struct RelaxedMask {
  std::vector<double> values;
  double k = 10.0;

  std::size_t size() const { return values.size(); }
};

struct BinaryMask {
  std::vector<std::uint8_t> bits;
  double rho = 0.0;

  std::size_t size() const { return bits.size(); }
  std::size_t ones() const;
  /// Fraction of zero entries.
  double sparsity() const;
  static BinaryMask all(std::size_t n, bool value);
};

inline constexpr double kDefaultTemperature = 10.0;

RelaxedMask relax(const ContinuousMask& m, double k = kDefaultTemperature);
/// d relax / d m, element-wise.
std::vector<double> relax_gradient(const ContinuousMask& m, double k = kDefaultTemperature);

/// 1 where value >= rho.
BinaryMask binarize(const ContinuousMask& m, double rho);
BinaryMask binarize(const RelaxedMask& m, double rho);

ContinuousMask average_masks(std::span<const ContinuousMask> masks);

/// |a and b| / |a or b|; 1 when both are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Threshold whose binarization has sparsity closest to `target_sparsity`;
/// ties resolve to the larger threshold. Returns +inf for the all-zero mask.
double sparsity_to_threshold(std::span<const double> values, double target_sparsity);
double sparsity_to_threshold(const ContinuousMask& m, double target_sparsity);

/// Exactly round((1 - sparsity) * n) ones at uniformly random positions.
BinaryMask random_mask(std::size_t n, double sparsity, std::mt19937_64& rng);

/// On-disk mask: text header followed by a little-endian payload (packed bits
/// for binary masks, float32 otherwise).
struct MaskFile {
  std::string scope;
  std::variant<ContinuousMask, RelaxedMask, BinaryMask> mask;
};

void write_mask(std::ostream& out, const MaskFile& file);
MaskFile read_mask(std::istream& in);
void save_mask(const std::string& path, const MaskFile& file);
MaskFile load_mask(const std::string& path);

}  // namespace vedit
