#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dtam/numcore/blob.hpp"
#include "dtam/numcore/nn.hpp"

namespace dtam {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
  }
  return "relu";
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  throw UsageError("unknown activation '" + s + "'");
}

std::string to_string(CellKind c) { return c == CellKind::Gru ? "gru" : "lstm"; }

CellKind parse_cell_kind(const std::string& s) {
  if (s == "gru") return CellKind::Gru;
  if (s == "lstm") return CellKind::Lstm;
  throw UsageError("unknown recurrence cell '" + s + "'");
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

Eigen::Index TensorRecord::rows() const {
  return std::visit([](const auto& m) { return m.rows(); }, data);
}
Eigen::Index TensorRecord::cols() const {
  return std::visit([](const auto& m) { return m.cols(); }, data);
}

const TensorRecord* TensorBlob::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CorruptionError("tensor blob truncated");
  char buf[sizeof(T)];
  std::memcpy(buf, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <typename S>
void put_matrix(std::string& out, const Mat<S>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<S>(out, m(i, j));
}

template <typename S>
Mat<S> get_matrix(std::string_view in, std::size_t& pos, std::uint64_t rows, std::uint64_t cols) {
  if (rows * cols * sizeof(S) > in.size() - std::min(pos, in.size())) throw CorruptionError("tensor blob truncated");
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_le<S>(in, pos);
  return m;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool meta_value_ok(const std::string& s) { return s.find('\n') == std::string::npos; }

}  // namespace

void write_blob(const std::filesystem::path& dir, const TensorBlob& blob) {
  std::filesystem::create_directories(dir);
  std::string bin;
  std::ostringstream manifest;
  manifest << "dtam-tensors " << TensorBlob::kFormatVersion << "\n";
  for (const auto& [k, v] : blob.meta) {
    if (k.empty() || k.find_first_of(" \t\n") != std::string::npos || !meta_value_ok(v))
      throw DataError("invalid checkpoint metadata key/value: " + k);
    manifest << "meta " << k << " " << v << "\n";
  }
  for (const auto& t : blob.tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) throw DataError("invalid tensor name: " + t.name);
    const std::size_t offset = bin.size();
    std::string rec;
    put_le<std::uint32_t>(rec, static_cast<std::uint32_t>(t.name.size()));
    rec += t.name;
    put_le<std::uint8_t>(rec, static_cast<std::uint8_t>(t.dtype()));
    put_le<std::uint32_t>(rec, 2);
    put_le<std::uint64_t>(rec, static_cast<std::uint64_t>(t.rows()));
    put_le<std::uint64_t>(rec, static_cast<std::uint64_t>(t.cols()));
    std::visit([&](const auto& m) { put_matrix(rec, m); }, t.data);
    bin += rec;
    manifest << "tensor " << t.name << " " << (t.dtype() == DType::F64 ? "f64" : "f32") << " " << t.rows() << " " << t.cols()
             << " " << offset << " " << rec.size() << " " << hex64(fnv1a64(rec)) << "\n";
  }
  manifest << "blob " << bin.size() << " " << hex64(fnv1a64(bin)) << "\n";

  std::ofstream ob(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  ob.write(bin.data(), static_cast<std::streamsize>(bin.size()));
  if (!ob) throw DataError("failed writing " + (dir / "tensors.bin").string());
  std::ofstream om(dir / "manifest.txt", std::ios::trunc);
  om << manifest.str();
  if (!om) throw DataError("failed writing " + (dir / "manifest.txt").string());
}

TensorBlob read_blob(const std::filesystem::path& dir) {
  const std::string manifest = read_file(dir / "manifest.txt");
  const std::string bin = read_file(dir / "tensors.bin");

  std::istringstream ms(manifest);
  std::string line;
  if (!std::getline(ms, line)) throw CorruptionError("empty manifest");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    hs >> magic >> version;
    if (magic != "dtam-tensors") throw CorruptionError("not a tensor manifest");
    if (version != TensorBlob::kFormatVersion) throw CorruptionError("unsupported tensor format version " + std::to_string(version));
  }

  TensorBlob blob;
  bool saw_blob_line = false;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      blob.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name, dtype, hash;
      std::uint64_t rows = 0, cols = 0, offset = 0, size = 0;
      ls >> name >> dtype >> rows >> cols >> offset >> size >> hash;
      if (!ls) throw CorruptionError("malformed manifest line: " + line);
      if (offset + size > bin.size()) throw CorruptionError("tensor '" + name + "' extends past end of blob (truncated file?)");
      std::string_view rec(bin.data() + offset, size);
      if (hex64(fnv1a64(rec)) != hash) throw CorruptionError("hash mismatch for tensor '" + name + "'");
      std::size_t pos = 0;
      const auto nlen = get_le<std::uint32_t>(rec, pos);
      if (pos + nlen > rec.size()) throw CorruptionError("tensor record truncated");
      std::string stored(rec.substr(pos, nlen));
      pos += nlen;
      if (stored != name) throw CorruptionError("tensor name mismatch: manifest '" + name + "' vs blob '" + stored + "'");
      const auto dt = get_le<std::uint8_t>(rec, pos);
      const auto rank = get_le<std::uint32_t>(rec, pos);
      if (rank != 2) throw CorruptionError("unsupported tensor rank " + std::to_string(rank));
      const auto r = get_le<std::uint64_t>(rec, pos);
      const auto c = get_le<std::uint64_t>(rec, pos);
      if (r != rows || c != cols) throw CorruptionError("shape mismatch for tensor '" + name + "'");
      TensorRecord tr;
      tr.name = name;
      if (dt == static_cast<std::uint8_t>(DType::F64) && dtype == "f64")
        tr.data = get_matrix<double>(rec, pos, r, c);
      else if (dt == static_cast<std::uint8_t>(DType::F32) && dtype == "f32")
        tr.data = get_matrix<float>(rec, pos, r, c);
      else
        throw CorruptionError("dtype mismatch for tensor '" + name + "'");
      if (pos != rec.size()) throw CorruptionError("trailing bytes in tensor record '" + name + "'");
      blob.tensors.push_back(std::move(tr));
    } else if (kind == "blob") {
      std::uint64_t size = 0;
      std::string hash;
      ls >> size >> hash;
      if (size != bin.size()) throw CorruptionError("blob size " + std::to_string(bin.size()) + " != manifest " + std::to_string(size) + " (truncated file?)");
      if (hex64(fnv1a64(bin)) != hash) throw CorruptionError("blob hash mismatch");
      saw_blob_line = true;
    } else {
      throw CorruptionError("unknown manifest entry: " + kind);
    }
  }
  if (!saw_blob_line) throw CorruptionError("manifest missing blob checksum (truncated manifest?)");
  return blob;
}

}  // namespace dtam
