#include "dynembed/checkpoint.hpp"

#include "dynembed/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dynembed {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'E', 'M', 'B', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

void put_string(std::ostream& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T value{};
    read(reinterpret_cast<char*>(&value), sizeof value);
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) fail("string length out of range");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) fail("truncated checkpoint");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_, 0, what);
  }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model) {
  const EncoderConfig& c = model.encoder.config;
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::int32_t>(out, c.dim);
  put<std::int32_t>(out, c.heads);
  put<std::int32_t>(out, c.layers);
  put<std::int32_t>(out, c.ff_dim);
  put<std::int32_t>(out, c.max_seq);
  put<double>(out, c.dropout);
  put<double>(out, c.norm_eps);
  put<std::int32_t>(out, model.encoder.vocab.node_count);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.heads.graph_ids.size()));
  for (const auto& id : model.heads.graph_ids) put_string(out, id);

  std::uint32_t count = 0;
  model.for_each_tensor([&](std::string_view, const Matrix&) { ++count; });
  put<std::uint32_t>(out, count);
  model.for_each_tensor([&](std::string_view name, const Matrix& m) {
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
  if (!out) throw RuntimeFailure("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  save_checkpoint(out, model);
}

Model load_checkpoint(std::istream& in, const std::string& source_name) {
  Reader r(in, source_name);
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    r.fail("unsupported checkpoint version " + std::to_string(version));

  EncoderConfig c;
  c.dim = r.get<std::int32_t>();
  c.heads = r.get<std::int32_t>();
  c.layers = r.get<std::int32_t>();
  c.ff_dim = r.get<std::int32_t>();
  c.max_seq = r.get<std::int32_t>();
  c.dropout = r.get<double>();
  c.norm_eps = r.get<double>();
  c.validate();
  Vocabulary vocab{r.get<std::int32_t>()};
  if (vocab.node_count < 1) r.fail("bad vocabulary size");

  std::vector<std::string> ids(r.get<std::uint32_t>());
  for (auto& id : ids) id = r.get_string();

  // Allocate the expected shapes, then fill them in declaration order.
  Rng dummy(0);
  Model model;
  model.encoder = EncoderState::initialize(c, vocab, dummy);
  model.heads.graph_ids = std::move(ids);
  model.heads.temporal = Matrix::Zero(c.dim, vocab.size());
  model.heads.graph = Matrix::Zero(c.dim, static_cast<Eigen::Index>(model.heads.graph_ids.size()));

  std::uint32_t expected = 0;
  model.for_each_tensor([&](std::string_view, const Matrix&) { ++expected; });
  const auto count = r.get<std::uint32_t>();
  if (count != expected)
    throw ValidationError(source_name + ": expected " + std::to_string(expected) +
                          " tensors, found " + std::to_string(count));
  model.for_each_tensor([&](std::string_view name, Matrix& m) {
    const std::string stored = r.get_string();
    if (stored != name)
      throw ValidationError(source_name + ": expected tensor " + std::string(name) + ", found " +
                            stored);
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols()))
      throw ValidationError(source_name + ": tensor " + stored + " has unexpected shape");
    r.read(reinterpret_cast<char*>(m.data()), m.size() * sizeof(double));
  });
  model.encoder.validate();
  return model;
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return load_checkpoint(in, path.string());
}

}  // namespace dynembed
