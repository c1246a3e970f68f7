#include "ssc/params_io.hpp"

#include <bit>
#include <sstream>

#include "ssc/config.hpp"
#include "ssc/errors.hpp"
#include "ssc/grid_io.hpp"

namespace ssc {

namespace {

void visit_tensor(const std::string& name, Tensor& t, const ParamVisitor& fn) {
  fn(name, t.shape(), t.values());
}

void visit_vector(const std::string& name, std::vector<double>& v, const ParamVisitor& fn) {
  fn(name, {v.size()}, v);
}

void visit_linear(const std::string& name, LinearMap& m, const ParamVisitor& fn) {
  visit_tensor(name + ".weight", m.weight, fn);
  visit_vector(name + ".bias", m.bias, fn);
}

void visit_residual(const std::string& name, ResidualParams& r, const ParamVisitor& fn) {
  visit_vector(name + ".attn_norm.gamma", r.attn_norm.gamma, fn);
  visit_vector(name + ".attn_norm.beta", r.attn_norm.beta, fn);
  visit_linear(name + ".ffn.expand", r.ffn.expand, fn);
  visit_linear(name + ".ffn.contract", r.ffn.contract, fn);
  visit_vector(name + ".ffn_norm.gamma", r.ffn_norm.gamma, fn);
  visit_vector(name + ".ffn_norm.beta", r.ffn_norm.beta, fn);
}

void visit_block(const std::string& name, DeformableBlockParams& b, const ParamVisitor& fn) {
  visit_linear(name + ".offset_net", b.attn.offset_net, fn);
  visit_linear(name + ".weight_net", b.attn.weight_net, fn);
  visit_linear(name + ".value_proj", b.attn.value_proj, fn);
  visit_linear(name + ".output_proj", b.attn.output_proj, fn);
  visit_residual(name, b.residual, fn);
}

void visit_block(const std::string& name, AttnBlockParams& b, const ParamVisitor& fn) {
  visit_linear(name + ".query_proj", b.attn.query_proj, fn);
  visit_linear(name + ".key_proj", b.attn.key_proj, fn);
  visit_linear(name + ".value_proj", b.attn.value_proj, fn);
  visit_linear(name + ".output_proj", b.attn.output_proj, fn);
  visit_residual(name, b.residual, fn);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t at, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
  return v;
}

}  // namespace

void visit_params(ModelParams& p, const ParamVisitor& fn) {
  visit_tensor("scene_embedding", p.scene_embedding, fn);
  visit_tensor("queries.embeddings", p.queries.embeddings, fn);
  visit_tensor("queries.ref_logits", p.queries.ref_logits, fn);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    visit_block("encoder." + std::to_string(i), p.encoder[i], fn);
  }
  visit_block("proposal", p.proposal, fn);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const std::string base = "decoder." + std::to_string(i);
    auto& d = p.decoder[i];
    visit_block(base + ".instance_image", d.instance_image, fn);
    visit_block(base + ".scene_instance", d.scene_instance, fn);
    visit_block(base + ".scene_self", d.scene_self, fn);
    visit_block(base + ".instance_scene", d.instance_scene, fn);
    visit_block(base + ".instance_self", d.instance_self, fn);
  }
  for (std::size_t i = 0; i < p.head.aspp.size(); ++i) {
    auto& conv = p.head.aspp[i];
    const std::string base = "head.aspp." + std::to_string(i);
    visit_tensor(base + ".weight", conv.weight, fn);
    visit_vector(base + ".bias", conv.bias, fn);
  }
  visit_linear("head.mix", p.head.mix, fn);
  visit_linear("head.classifier", p.head.classifier, fn);
}

std::vector<std::uint8_t> encode_param_blob(const Tensor::Shape& shape,
                                            std::span<const double> values) {
  if (!values.empty() && shape_product(shape) != values.size()) {
    throw ShapeError("encode_param_blob: shape does not match value count");
  }
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>((bits >> s) & 0xff));
  }
  return out;
}

void decode_param_blob(std::span<const std::uint8_t> bytes, const Tensor::Shape& shape,
                       std::span<double> out) {
  if (bytes.size() < 4) throw FormatError("truncated blob header", bytes.size());
  const auto rank = get_le(bytes, 0, 4);
  if (rank != shape.size()) throw FormatError("blob rank mismatch", 0);
  if (bytes.size() < 4 + 4 * rank) throw FormatError("truncated blob header", bytes.size());
  for (std::size_t a = 0; a < rank; ++a) {
    if (get_le(bytes, 4 + 4 * a, 4) != shape[a]) throw FormatError("blob dim mismatch", 4 + 4 * a);
  }
  const std::size_t data_at = 4 + 4 * rank;
  if (bytes.size() != data_at + 8 * out.size()) {
    throw FormatError("blob payload size mismatch", std::min(bytes.size(), data_at));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<double>(get_le(bytes, data_at + 8 * i, 8));
  }
}

void save_params(ModelParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  visit_params(params, [&](const std::string& name, const Tensor::Shape& shape,
                           std::span<double> values) {
    manifest << name << "\n";
    write_binary_file(dir / (name + ".bin"), encode_param_blob(shape, values));
  });
  write_text_file(dir / "manifest.txt", manifest.str());
}

void load_params(ModelParams& params, const std::filesystem::path& dir) {
  std::vector<std::string> expected;
  visit_params(params, [&](const std::string& name, const Tensor::Shape&, std::span<double>) {
    expected.push_back(name);
  });
  std::istringstream is(read_text_file(dir / "manifest.txt"));
  std::vector<std::string> listed;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty()) listed.push_back(line);
  }
  if (listed != expected) throw ConfigError("parameter manifest does not match the model layout");
  visit_params(params, [&](const std::string& name, const Tensor::Shape& shape,
                           std::span<double> values) {
    decode_param_blob(read_binary_file(dir / (name + ".bin")), shape, values);
  });
}

}  // namespace ssc
