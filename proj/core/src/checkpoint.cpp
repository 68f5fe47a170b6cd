#include "vedit/checkpoint.hpp"

#include "vedit/errors.hpp"
#include "vedit/io_util.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vedit {

namespace {

constexpr char kMagic[8] = {'V', 'E', 'D', 'I', 'T', 'C', 'K', 'P'};

const std::string& need(const std::map<std::string, std::string>& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw std::runtime_error("checkpoint header missing '" + key + "'");
  return it->second;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (!ckpt.header.count("kind")) throw std::invalid_argument("checkpoint header needs a kind");
  std::string header;
  for (const auto& [k, v] : ckpt.header) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint header entry not representable: " + k);
    }
    header += k + "=" + v + "\n";
  }
  io::write_atomic(path, [&](std::ostream& out) {
    out.write(kMagic, sizeof(kMagic));
    io::write_u32_le(out, kCheckpointVersion);
    io::write_u32_le(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    io::write_u32_le(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
      io::write_u32_le(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      io::write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
      io::write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
      for (ad::Index i = 0; i < m.size(); ++i) io::write_f64_le(out, m.data()[i]);
    }
  });
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error(path + ": not a checkpoint");
  const std::uint32_t version = io::read_u32_le(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t hlen = io::read_u32_le(in);
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  Checkpoint ckpt;
  ckpt.header = io::parse_header(header);
  const std::uint32_t count = io::read_u32_le(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t nlen = io::read_u32_le(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const std::uint32_t rows = io::read_u32_le(in);
    const std::uint32_t cols = io::read_u32_le(in);
    ad::Matrix m(rows, cols);
    for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = io::read_f64_le(in);
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!in) throw std::runtime_error(path + ": truncated checkpoint");
  return ckpt;
}

void vit_config_to_header(const ViTConfig& c, std::map<std::string, std::string>& h) {
  h["vit.image_size"] = std::to_string(c.image_size);
  h["vit.patch_size"] = std::to_string(c.patch_size);
  h["vit.channels"] = std::to_string(c.channels);
  h["vit.embed_dim"] = std::to_string(c.embed_dim);
  h["vit.mlp_dim"] = std::to_string(c.mlp_dim);
  h["vit.num_blocks"] = std::to_string(c.num_blocks);
  h["vit.num_heads"] = std::to_string(c.num_heads);
  h["vit.num_classes"] = std::to_string(c.num_classes);
  h["vit.seed"] = std::to_string(c.seed);
}

ViTConfig vit_config_from_header(const std::map<std::string, std::string>& h) {
  ViTConfig c;
  c.image_size = std::stoi(need(h, "vit.image_size"));
  c.patch_size = std::stoi(need(h, "vit.patch_size"));
  c.channels = std::stoi(need(h, "vit.channels"));
  c.embed_dim = std::stoi(need(h, "vit.embed_dim"));
  c.mlp_dim = std::stoi(need(h, "vit.mlp_dim"));
  c.num_blocks = std::stoi(need(h, "vit.num_blocks"));
  c.num_heads = std::stoi(need(h, "vit.num_heads"));
  c.num_classes = std::stoi(need(h, "vit.num_classes"));
  c.seed = std::stoull(need(h, "vit.seed"));
  c.validate();
  return c;
}

ParamStore params_from_checkpoint(const Checkpoint& ckpt, const ParamStore& reference) {
  if (ckpt.tensors.size() != reference.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, expected " +
                             std::to_string(reference.size()));
  }
  ParamStore out = reference;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& [name, m] = ckpt.tensors[i];
    if (name != reference.info(i).name) {
      throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                               reference.info(i).name + "'");
    }
    const auto& ref = reference.value(i);
    if (m.rows() != ref.rows() || m.cols() != ref.cols()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()) + ", config expects " + std::to_string(ref.rows()) + "x" +
                               std::to_string(ref.cols()));
    }
    out.set(i, m);
  }
  return out;
}

void save_model(const std::string& path, const BaseModel& model, const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.header = extra;
  ckpt.header["kind"] = "vit";
  ckpt.header["heldout_accuracy"] = io::format_double(model.heldout_accuracy);
  vit_config_to_header(model.config(), ckpt.header);
  const auto& p = model.params();
  for (std::size_t i = 0; i < p.size(); ++i) ckpt.tensors.emplace_back(p.info(i).name, p.value(i));
  write_checkpoint(path, ckpt);
}

BaseModel load_model(const std::string& path, std::map<std::string, std::string>* header) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (need(ckpt.header, "kind") != "vit") throw std::runtime_error(path + ": not a ViT checkpoint");
  const ViTConfig cfg = vit_config_from_header(ckpt.header);
  BaseModel model(cfg, params_from_checkpoint(ckpt, init_vit_params(cfg)));
  if (auto it = ckpt.header.find("heldout_accuracy"); it != ckpt.header.end()) {
    model.heldout_accuracy = io::parse_double(it->second);
  }
  if (header) *header = ckpt.header;
  return model;
}

}  // namespace vedit
