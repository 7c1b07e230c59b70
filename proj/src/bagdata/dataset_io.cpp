#include <fstream>
#include <map>
#include <sstream>

#include "../common/binary_io.hpp"
#include "abmil/bagdata.hpp"
#include "abmil/errors.hpp"
#include "abmil/model.hpp"

namespace abmil::data {

// Split file layout (little-endian): u32 magic "ABMD", u32 version, u32 bag
// count, u32 instance dim; per bag: u32 bag label, u32 n, n x u32 instance
// label, n x u64 pool index, n*dim x f64 instances (row-major).

namespace {

constexpr std::uint32_t kMagic = 0x444d4241;  // "ABMD"
constexpr std::uint32_t kVersion = 1;

void save_split(const std::vector<Bag>& bags, std::size_t dim, const std::filesystem::path& path) {
  io::LeWriter w;
  w.u32(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(bags.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const Bag& bag : bags) {
    w.u32(static_cast<std::uint32_t>(bag.label));
    w.u32(static_cast<std::uint32_t>(bag.size()));
    for (int y : bag.instance_labels) w.u32(static_cast<std::uint32_t>(y));
    for (std::size_t i = 0; i < bag.size(); ++i) w.u64(i < bag.pool_indices.size() ? bag.pool_indices[i] : 0);
    for (double v : bag.instances.data()) w.f64(v);
  }
  w.write_to(path);
}

std::vector<Bag> load_split(const std::filesystem::path& path, Split split) {
  auto r = io::LeReader::from_file(path);
  if (r.u32() != kMagic) throw FormatError(path.string() + ": not a bag split file (bad magic)");
  if (r.u32() != kVersion) throw FormatError(path.string() + ": unsupported bag split version");
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (dim == 0) throw FormatError(path.string() + ": zero instance dimension");
  std::vector<Bag> bags(count);
  for (Bag& bag : bags) {
    bag.split = split;
    bag.label = static_cast<int>(r.u32());
    const std::uint32_t n = r.u32();
    if (n == 0) throw FormatError(path.string() + ": empty bag at byte " + std::to_string(r.offset()));
    bag.instance_labels.resize(n);
    for (int& y : bag.instance_labels) y = static_cast<int>(r.u32());
    bag.pool_indices.resize(n);
    for (auto& idx : bag.pool_indices) idx = r.u64();
    std::vector<double> data(static_cast<std::size_t>(n) * dim);
    for (double& v : data) v = r.f64();
    bag.instances = Tensor({n, dim}, std::move(data));
    if (bag.label != model::bag_label(bag.instance_labels)) {
      throw FormatError(path.string() + ": bag label disagrees with its instance labels");
    }
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after offset " + std::to_string(r.offset()));
  return bags;
}

std::string spec_text(const BagSpec& s) {
  std::ostringstream os;
  os.precision(17);
  os << "n_train_bags = " << s.n_train_bags << '\n'
     << "n_val_bags = " << s.n_val_bags << '\n'
     << "n_test_bags = " << s.n_test_bags << '\n'
     << "instances_per_bag = " << s.instances_per_bag << '\n'
     << "key_fraction = " << s.key_fraction << '\n'
     << "key_class = " << s.key_class << '\n'
     << "positive_bag_fraction = " << s.positive_bag_fraction << '\n'
     << "seed = " << s.seed << '\n';
  return os.str();
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::size_t dim = dataset.input_dim();
  save_split(dataset.train, dim, dir / "train.bin");
  save_split(dataset.validation, dim, dir / "validation.bin");
  save_split(dataset.test, dim, dir / "test.bin");

  std::ofstream out(dir / "dataset.txt");
  if (!out) throw IoError("cannot write " + (dir / "dataset.txt").string());
  out << spec_text(dataset.spec) << "input_dim = " << dim << '\n'
      << "train_bags = " << dataset.train.size() << '\n'
      << "validation_bags = " << dataset.validation.size() << '\n'
      << "test_bags = " << dataset.test.size() << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.train = load_split(dir / "train.bin", Split::Train);
  ds.validation = load_split(dir / "validation.bin", Split::Validation);
  ds.test = load_split(dir / "test.bin", Split::Test);

  std::ifstream in(dir / "dataset.txt");
  if (!in) throw IoError("cannot open " + (dir / "dataset.txt").string());
  std::map<std::string, std::string> kv;
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  try {
    auto& s = ds.spec;
    s.n_train_bags = std::stoull(kv.at("n_train_bags"));
    s.n_val_bags = std::stoull(kv.at("n_val_bags"));
    s.n_test_bags = std::stoull(kv.at("n_test_bags"));
    s.instances_per_bag = std::stoull(kv.at("instances_per_bag"));
    s.key_fraction = std::stod(kv.at("key_fraction"));
    s.key_class = std::stoi(kv.at("key_class"));
    s.positive_bag_fraction = std::stod(kv.at("positive_bag_fraction"));
    s.seed = std::stoull(kv.at("seed"));
  } catch (const std::exception& e) {
    throw FormatError((dir / "dataset.txt").string() + ": incomplete or malformed bag settings (" + e.what() + ")");
  }
  const std::size_t dim = ds.input_dim();
  for (const auto* split : {&ds.train, &ds.validation, &ds.test}) {
    for (const Bag& b : *split) {
      if (b.instances.cols() != dim) throw FormatError(dir.string() + ": splits disagree on instance dimension");
    }
  }
  return ds;
}

}  // namespace abmil::data
