#include "hpm/dataio/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hpm/error.hpp"

namespace hpm::data {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

// ---------------------------------------------------------------- PPM / PGM

std::string encode_ppm(const patch::VisualTensor& v) {
  const patch::Geometry& g = v.geometry;
  if (g.frames != 1 || (g.channels != 1 && g.channels != 3))
    throw ContractError("write_ppm: needs a single frame with 1 or 3 channels");
  std::string out = (g.channels == 3 ? "P6\n" : "P5\n") + std::to_string(g.width) + " " +
                    std::to_string(g.height) + "\n255\n";
  out.reserve(out.size() + v.data.size());
  for (double x : v.data) {
    const double q = std::floor(std::clamp(x, 0.0, 1.0) * 255.0 + 0.5);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

void write_ppm(const patch::VisualTensor& v, const fs::path& path) { write_file(path, encode_ppm(v)); }

patch::VisualTensor decode_ppm(const std::string& bytes) {
  std::size_t pos = 0, token = 0;
  auto skip_space = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = token = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 24)) throw ParseError(std::string("ppm: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("ppm: expected ") + what, start);
    return value;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ParseError("ppm: expected magic P5 or P6", 0);
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const std::size_t width = read_int("width");
  const std::size_t width_at = token;
  const std::size_t height = read_int("height");
  const std::size_t height_at = token;
  const std::size_t maxval = read_int("maxval");
  if (maxval != 255) throw ParseError("ppm: only maxval 255 is supported", token);
  if (width == 0) throw ParseError("ppm: zero width", width_at);
  if (height == 0) throw ParseError("ppm: zero height", height_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw ParseError("ppm: missing whitespace after header", pos);
  ++pos;
  const std::size_t need = width * height * channels;
  if (bytes.size() - pos < need)
    throw ParseError("ppm: pixel data truncated, need " + std::to_string(need) + " bytes", pos);
  patch::Geometry g;
  g.frames = 1;
  g.height = height;
  g.width = width;
  g.channels = channels;
  g.patch = 1;
  g.temporal_patch = 1;
  patch::VisualTensor v(g);
  for (std::size_t i = 0; i < need; ++i)
    v.data[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
  return v;
}

patch::VisualTensor read_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'H', 'P', 'M', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str64(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what +
                                " at byte " + std::to_string(pos_));
  }
  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string str(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  double f64() { return std::bit_cast<double>(uint(8, "tensor payload")); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& t) { return t.first == name; });
}

const diff::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.first == name) return t.second;
  throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint lacks tensor '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(Checkpoint::kVersion);
  w.str64(c.config_text);
  w.u64(c.epoch);
  w.u64(c.step);
  w.str64(c.rng_state);
  w.u64(c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    if (bytes.size() < sizeof kMagic && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0)
      throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint truncated inside magic");
    throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.str(sizeof kMagic, "magic");
  const auto version = r.uint(4, "version");
  if (version != Checkpoint::kVersion)
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_text = r.str(r.uint(8, "config length"), "config text");
  c.epoch = r.uint(8, "epoch");
  c.step = r.uint(8, "step");
  c.rng_state = r.str(r.uint(8, "rng length"), "rng state");
  const std::uint64_t count = r.uint(8, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.uint(4, "name length"), "tensor name");
    const std::uint64_t rank = r.uint(4, "rank");
    if (rank == 0 || rank > 8)
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "tensor '" + name + "' has invalid rank " + std::to_string(rank));
    diff::Shape shape;
    std::uint64_t total = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      const std::uint64_t e = r.uint(8, "extent");
      if (e == 0 || e > (1ULL << 32))
        throw CheckpointError(CheckpointError::Kind::malformed,
                              "tensor '" + name + "' has invalid extent");
      shape.push_back(static_cast<std::size_t>(e));
      total *= e;
    }
    if (total > r.remaining() / 8)
      throw CheckpointError(CheckpointError::Kind::truncated,
                            "checkpoint truncated inside tensor '" + name + "'");
    std::vector<double> values(total);
    for (double& v : values) v = r.f64();
    c.tensors.emplace_back(std::move(name), diff::Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0)
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "trailing bytes after checkpoint at byte " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------- dataset pack

std::string geometry_text(const patch::Geometry& g) {
  return "frames = " + std::to_string(g.frames) + "\nheight = " + std::to_string(g.height) +
         "\nwidth = " + std::to_string(g.width) + "\nchannels = " + std::to_string(g.channels) +
         "\npatch = " + std::to_string(g.patch) +
         "\ntemporal_patch = " + std::to_string(g.temporal_patch) + "\n";
}

void write_pack(const fs::path& dir, const std::vector<SampleRecord>& records) {
  fs::create_directories(dir);
  std::string manifest;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SampleRecord& rec = records[i];
    const patch::Geometry& g = rec.visual.geometry;
    char name[32];
    std::snprintf(name, sizeof name, "sample_%06zu.bin", i);
    Checkpoint c;
    c.config_text = geometry_text(g);
    c.put("image", diff::Tensor({g.frames, g.height, g.width, g.channels}, rec.visual.data));
    std::vector<double> fg(rec.fg_mask.begin(), rec.fg_mask.end());
    const std::size_t n = fg.size();
    c.put("fg_mask", diff::Tensor({n}, std::move(fg)));
    save_checkpoint(dir / name, c);
    manifest += std::string(name) + "," + std::to_string(rec.label) + "\n";
  }
  write_file(dir / "manifest.txt", manifest);
}

std::vector<SampleRecord> read_pack(const fs::path& dir, const patch::Geometry& geometry) {
  const std::string manifest = read_file(dir / "manifest.txt");
  std::vector<SampleRecord> out;
  std::istringstream in(manifest);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw ParseError("manifest: expected 'path,label'", line_start);
    SampleRecord rec;
    try {
      rec.label = std::stoul(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ParseError("manifest: bad label", line_start + comma + 1);
    }
    const Checkpoint c = load_checkpoint(dir / line.substr(0, comma));
    const diff::Tensor& img = c.get("image");
    if (img.rank() != 4 || img.shape()[0] != geometry.frames || img.shape()[1] != geometry.height ||
        img.shape()[2] != geometry.width || img.shape()[3] != geometry.channels)
      throw GeometryError("pack sample " + line.substr(0, comma) + " has shape " +
                          diff::shape_str(img.shape()) + ", run geometry differs");
    rec.visual = patch::VisualTensor(geometry);
    rec.visual.data = img.storage();
    if (c.has("fg_mask")) {
      const diff::Tensor& fg = c.get("fg_mask");
      if (fg.size() != geometry.num_patches())
        throw GeometryError("pack sample fg_mask length differs from patch count");
      for (double v : fg.values()) rec.fg_mask.push_back(v != 0.0);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace hpm::data
