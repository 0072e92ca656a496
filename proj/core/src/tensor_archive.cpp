#include "cmanp/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cmanp {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'N', 'P', 'T', 'N', 'S', 'R'};

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.insert(buf.end(), b, b + 4);
}

void put_u64(std::vector<char>& buf, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.insert(buf.end(), b, b + 8);
}

void put_str(std::vector<char>& buf, const std::string& s) {
  put_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf.insert(buf.end(), s.begin(), s.end());
}

struct Reader {
  const std::vector<char>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw ArchiveError("archive truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(buf.data() + pos, buf.data() + pos + n);
    pos += n;
    return s;
  }
};

std::uint64_t checksum(const char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

static_assert(std::endian::native == std::endian::little,
              "archive writer assumes a little-endian host");

}  // namespace

const Tensor& TensorArchive::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ArchiveError("archive has no tensor named '" + name + "'");
}

const std::string& TensorArchive::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw ArchiveError("archive has no metadata key '" + key + "'");
}

bool TensorArchive::has_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return true;
  }
  return false;
}

void save_archive(const std::string& path, const TensorArchive& archive) {
  std::vector<char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 8);
  put_u32(buf, kArchiveVersion);
  put_u32(buf, 0);  // reserved

  put_u32(buf, static_cast<std::uint32_t>(archive.meta.size()));
  for (const auto& [k, v] : archive.meta) {
    put_str(buf, k);
    put_str(buf, v);
  }

  // Manifest with payload offsets measured in doubles from the blob start.
  put_u32(buf, static_cast<std::uint32_t>(archive.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    put_str(buf, name);
    put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t e : t.shape()) put_u64(buf, static_cast<std::uint64_t>(e));
    put_u64(buf, offset);
    offset += static_cast<std::uint64_t>(t.numel());
  }

  put_u64(buf, offset);  // blob length in doubles
  for (const auto& [name, t] : archive.tensors) {
    auto d = t.data();
    const char* raw = reinterpret_cast<const char*>(d.data());
    buf.insert(buf.end(), raw, raw + d.size() * sizeof(double));
  }

  put_u64(buf, checksum(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ArchiveError("short write to '" + path + "'");
}

TensorArchive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open '" + path + "' for reading");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 8 + 4 + 4 + 8 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw ArchiveError("'" + path + "' is not a tensor archive (bad magic)");
  }
  const std::uint64_t stored_sum = [&] {
    std::uint64_t v;
    std::memcpy(&v, buf.data() + buf.size() - 8, 8);
    return v;
  }();
  if (checksum(buf.data(), buf.size() - 8) != stored_sum) {
    throw ArchiveError("'" + path + "' is corrupt (checksum mismatch)");
  }

  Reader r{buf, 8};
  const std::uint32_t version = r.u32();
  if (version != kArchiveVersion) {
    throw ArchiveError("'" + path + "' has format version " + std::to_string(version) +
                       ", expected " + std::to_string(kArchiveVersion));
  }
  r.u32();  // reserved

  TensorArchive archive;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    archive.meta.emplace_back(std::move(k), std::move(v));
  }

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Entry e;
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    for (std::uint32_t a = 0; a < rank; ++a) e.shape.push_back(static_cast<std::int64_t>(r.u64()));
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }

  const std::uint64_t blob_len = r.u64();
  r.need(blob_len * sizeof(double));
  const char* blob = buf.data() + r.pos;

  for (Entry& e : entries) {
    const std::int64_t numel = shape_numel(e.shape);
    if (e.offset + static_cast<std::uint64_t>(numel) > blob_len) {
      throw ArchiveError("'" + path + "': tensor '" + e.name + "' overruns the payload");
    }
    std::vector<double> v(static_cast<std::size_t>(numel));
    std::memcpy(v.data(), blob + e.offset * sizeof(double), v.size() * sizeof(double));
    archive.tensors.emplace_back(std::move(e.name), Tensor::from(std::move(e.shape), std::move(v)));
  }
  return archive;
}

}  // namespace cmanp
