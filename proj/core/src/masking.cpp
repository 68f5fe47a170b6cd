#include "vedit/masking.hpp"

#include "vedit/io_util.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vedit {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(op) + ": non-finite mask entry");
  }
}

constexpr char kMagic[8] = {'V', 'E', 'D', 'I', 'T', 'M', 'S', 'K'};

}  // namespace

std::size_t BinaryMask::ones() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double BinaryMask::sparsity() const {
  if (bits.empty()) return 0.0;
  return static_cast<double>(bits.size() - ones()) / static_cast<double>(bits.size());
}

BinaryMask BinaryMask::all(std::size_t n, bool value) {
  BinaryMask m;
  m.bits.assign(n, value ? 1 : 0);
  m.rho = value ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  return m;
}

RelaxedMask relax(const ContinuousMask& m, double k) {
  if (!(k > 0.0)) throw std::invalid_argument("relax: temperature must be positive");
  require_finite(m.values, "relax");
  RelaxedMask out;
  out.k = k;
  out.values.reserve(m.size());
  for (double x : m.values) out.values.push_back(stable_sigmoid(k * x));
  return out;
}

std::vector<double> relax_gradient(const ContinuousMask& m, double k) {
  std::vector<double> g;
  g.reserve(m.size());
  for (double x : m.values) {
    const double s = stable_sigmoid(k * x);
    g.push_back(k * s * (1.0 - s));
  }
  return g;
}

BinaryMask binarize(const ContinuousMask& m, double rho) {
  BinaryMask out;
  out.rho = rho;
  out.bits.reserve(m.size());
  for (double x : m.values) out.bits.push_back(x >= rho ? 1 : 0);
  return out;
}

BinaryMask binarize(const RelaxedMask& m, double rho) {
  ContinuousMask c{m.values, MaskSource::kExternal};
  return binarize(c, rho);
}

ContinuousMask average_masks(std::span<const ContinuousMask> masks) {
  if (masks.empty()) throw std::invalid_argument("average_masks: empty list");
  const std::size_t n = masks.front().size();
  ContinuousMask out{std::vector<double>(n, 0.0), MaskSource::kAverage};
  for (const auto& m : masks) {
    if (m.size() != n) throw std::invalid_argument("average_masks: length mismatch");
    for (std::size_t i = 0; i < n; ++i) out.values[i] += m.values[i];
  }
  const double inv = 1.0 / static_cast<double>(masks.size());
  for (double& v : out.values) v *= inv;
  if (masks.size() == 1) out.source = masks.front().source;
  return out;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_iou: length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double sparsity_to_threshold(std::span<const double> values, double target) {
  if (!(target >= 0.0 && target <= 1.0)) throw std::invalid_argument("sparsity_to_threshold: target outside [0,1]");
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  // Candidate thresholds: each distinct value (zeros = count strictly below
  // it) plus +inf for the all-zero mask.
  double best_rho = std::numeric_limits<double>::infinity();
  double best_err = std::abs(1.0 - target);
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 < n && sorted[i] == sorted[i + 1]) continue;
    const std::size_t below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), sorted[i]) - sorted.begin());
    const double s = static_cast<double>(below) / static_cast<double>(n);
    const double err = std::abs(s - target);
    if (err < best_err) {
      best_err = err;
      best_rho = sorted[i];
    }
  }
  return best_rho;
}

double sparsity_to_threshold(const ContinuousMask& m, double target) { return sparsity_to_threshold(m.values, target); }

BinaryMask random_mask(std::size_t n, double sparsity, std::mt19937_64& rng) {
  const auto ones = static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  BinaryMask m;
  m.bits.assign(n, 0);
  for (std::size_t i = 0; i < ones && i < n; ++i) m.bits[idx[i]] = 1;
  m.rho = std::numeric_limits<double>::quiet_NaN();
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

void write_mask(std::ostream& out, const MaskFile& file) {
  std::ostringstream header;
  header << "scope=" << file.scope << "\n";
  std::string payload;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        header << "length=" << m.size() << "\n";
        if constexpr (std::is_same_v<T, BinaryMask>) {
          header << "kind=binary\n" << "rho=" << io::format_double(m.rho) << "\n";
          payload.assign((m.size() + 7) / 8, '\0');
          for (std::size_t i = 0; i < m.size(); ++i) {
            if (m.bits[i]) payload[i / 8] = static_cast<char>(payload[i / 8] | (1 << (i % 8)));
          }
        } else {
          if constexpr (std::is_same_v<T, RelaxedMask>) {
            header << "kind=relaxed\n" << "k=" << io::format_double(m.k) << "\n";
          } else {
            header << "kind=continuous\n";
          }
          for (double v : m.values) io::append_f32_le(payload, static_cast<float>(v));
        }
      },
      file.mask);
  const std::string h = header.str();
  out.write(kMagic, sizeof(kMagic));
  io::write_u32_le(out, 1);
  io::write_u32_le(out, static_cast<std::uint32_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("write_mask: stream failure");
}

MaskFile read_mask(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("read_mask: bad magic");
  const std::uint32_t version = io::read_u32_le(in);
  if (version != 1) throw std::runtime_error("read_mask: unsupported version");
  const std::uint32_t hlen = io::read_u32_le(in);
  std::string h(hlen, '\0');
  in.read(h.data(), hlen);
  const auto fields = io::parse_header(h);
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw std::runtime_error("read_mask: missing header field " + key);
    return it->second;
  };
  MaskFile file;
  file.scope = get("scope");
  const std::size_t n = std::stoull(get("length"));
  const std::string& kind = get("kind");
  if (kind == "binary") {
    BinaryMask m;
    m.rho = io::parse_double(get("rho"));
    std::string bytes((n + 7) / 8, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    m.bits.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.bits[i] = (static_cast<unsigned char>(bytes[i / 8]) >> (i % 8)) & 1u;
    file.mask = std::move(m);
  } else {
    std::vector<double> vals(n);
    for (auto& v : vals) v = io::read_f32_le(in);
    if (kind == "relaxed") {
      file.mask = RelaxedMask{std::move(vals), io::parse_double(get("k"))};
    } else if (kind == "continuous") {
      file.mask = ContinuousMask{std::move(vals), MaskSource::kExternal};
    } else {
      throw std::runtime_error("read_mask: unknown kind " + kind);
    }
  }
  if (!in) throw std::runtime_error("read_mask: truncated payload");
  return file;
}

void save_mask(const std::string& path, const MaskFile& file) {
  io::write_atomic(path, [&](std::ostream& out) { write_mask(out, file); });
}

MaskFile load_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open mask file " + path);
  return read_mask(in);
}

}  // namespace vedit
