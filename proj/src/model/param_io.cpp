#include <sstream>

#include "../common/binary_io.hpp"
#include "abmil/errors.hpp"
#include "abmil/model.hpp"

namespace abmil::model {

namespace {

constexpr std::uint32_t kMagic = 0x504d4241;  // "ABMP"
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagBatchNorm = 1u << 0;
constexpr std::uint32_t kFlagFinalActivation = 1u << 1;

}  // namespace

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  io::LeWriter w;
  w.u32(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(params.encoder.layers.size()));
  std::uint32_t flags = 0;
  if (params.encoder.batch_norm()) flags |= kFlagBatchNorm;
  if (params.encoder.final_activation) flags |= kFlagFinalActivation;
  w.u32(flags);
  w.f64(params.encoder.bn_eps);
  w.f64(params.encoder.bn_momentum);
  const auto tensors = params.all_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) w.u32(static_cast<std::uint32_t>(d));
  }
  for (const Tensor* t : tensors) {
    for (double v : t->data()) w.f64(v);
  }
  w.write_to(path);
}

ParamSet load_params(const std::filesystem::path& path) {
  auto r = io::LeReader::from_file(path);
  if (r.u32() != kMagic) throw FormatError(path.string() + ": not a parameter file (bad magic)");
  if (const auto v = r.u32(); v != kVersion) {
    throw FormatError(path.string() + ": unsupported parameter file version " + std::to_string(v));
  }
  const std::uint32_t layers = r.u32();
  const std::uint32_t flags = r.u32();
  ParamSet p;
  p.encoder.bn_eps = r.f64();
  p.encoder.bn_momentum = r.f64();
  p.encoder.final_activation = (flags & kFlagFinalActivation) != 0;
  const bool bn = (flags & kFlagBatchNorm) != 0;
  if (layers == 0) throw FormatError(path.string() + ": zero encoder layers");

  const std::uint32_t count = r.u32();
  const std::uint32_t expected = layers * (bn ? 6u : 2u) + 4u;
  if (count != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " tensors, header lists " +
                      std::to_string(count));
  }
  std::vector<graph::Shape> shapes(count);
  for (auto& s : shapes) {
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(path.string() + ": implausible tensor rank " + std::to_string(rank));
    for (std::uint32_t i = 0; i < rank; ++i) s.push_back(r.u32());
  }
  p.encoder.layers.resize(layers);
  for (auto& layer : p.encoder.layers) {
    if (bn) layer.bn.emplace();
  }
  auto tensors = p.all_tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    std::vector<double> data(graph::shape_numel(shapes[i]));
    for (double& v : data) v = r.f64();
    try {
      *tensors[i] = Tensor(shapes[i], std::move(data));
    } catch (const ShapeError& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after offset " + std::to_string(r.offset()));

  // Shape chain.
  std::size_t in = p.encoder.layers.front().weight.rank() == 2 ? p.encoder.layers.front().weight.rows() : 0;
  for (const auto& layer : p.encoder.layers) {
    if (layer.weight.rank() != 2 || layer.weight.rows() != in || layer.bias.shape() != graph::Shape{1, layer.weight.cols()}) {
      throw FormatError(path.string() + ": encoder layer shapes do not chain");
    }
    in = layer.weight.cols();
  }
  const auto& pool = p.pooler;
  if (pool.attention_v.rank() != 2 || pool.attention_v.cols() != in ||
      pool.attention_w.shape() != graph::Shape{pool.attention_v.rows(), 1} ||
      pool.classifier_c.shape() != graph::Shape{in, 1} || pool.classifier_b.shape() != graph::Shape{1, 1}) {
    throw FormatError(path.string() + ": pooler shapes inconsistent with encoder output width " + std::to_string(in));
  }
  return p;
}

std::string shape_manifest(const ParamSet& params) {
  std::ostringstream os;
  const auto names = params.all_tensor_names();
  const auto tensors = params.all_tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) os << names[i] << ' ' << graph::shape_str(tensors[i]->shape()) << '\n';
  return os.str();
}

}  // namespace abmil::model
