#include "fatsim/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "fatsim/errors.hpp"

namespace fatsim {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'A', 'T', 'C'};

template <typename T>
void put(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

void put_real(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(FormatError::Kind::Truncated, std::string("checkpoint truncated while reading ") + what);
  }
}

template <typename T>
T get(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes;
  read_exact(in, reinterpret_cast<char*>(bytes.data()), bytes.size(), what);
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

struct Header {
  std::uint32_t count = 0;
};

Header read_header(std::istream& in) {
  std::array<char, 4> magic;
  read_exact(in, magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw FormatError(FormatError::Kind::BadMagic, "not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch, "unsupported checkpoint version " + std::to_string(version) +
                                                              " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  return Header{get<std::uint32_t>(in, "tensor count")};
}

CheckpointEntry read_descriptor(std::istream& in) {
  CheckpointEntry e;
  const auto len = get<std::uint16_t>(in, "name length");
  e.name.resize(len);
  read_exact(in, e.name.data(), len, "tensor name");
  const auto rank = get<std::uint8_t>(in, "rank");
  for (std::uint8_t i = 0; i < rank; ++i) e.shape.push_back(get<std::uint32_t>(in, "dimension"));
  return e;
}

void assign_last_layer(ParameterSet& p) {
  if (p.size() == 0) return;
  std::vector<std::string> head;
  for (const auto& name : p.names()) {
    if (name.starts_with("head.")) head.push_back(name);
  }
  if (head.empty()) head.push_back(p.names().back());
  p.set_last_layer(head);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterSet& params) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw InvalidArgument("parameter name too long for checkpoint: " + e.name.substr(0, 32) + "...");
    }
    if (e.value.rank() > std::numeric_limits<std::uint8_t>::max()) throw InvalidArgument("tensor rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("tensor dimension too large");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (double v : e.value.data()) put_real(out, v);
  }
}

ParameterSet read_checkpoint(std::istream& in) {
  const Header h = read_header(in);
  ParameterSet p;
  for (std::uint32_t i = 0; i < h.count; ++i) {
    CheckpointEntry e = read_descriptor(in);
    Tensor t(e.shape);
    for (double& v : t.data()) v = std::bit_cast<double>(get<std::uint64_t>(in, "tensor data"));
    p.add(e.name, std::move(t));
  }
  assign_last_layer(p);
  return p;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write checkpoint " + path.string());
  write_checkpoint(out, params);
  out.flush();
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for checkpoint " + path.string());
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_checkpoint(in);
}

std::vector<CheckpointEntry> read_checkpoint_index(const std::filesystem::path& path) {
  auto in = open_in(path);
  const Header h = read_header(in);
  std::vector<CheckpointEntry> out;
  for (std::uint32_t i = 0; i < h.count; ++i) {
    out.push_back(read_descriptor(in));
    const auto bytes = static_cast<std::streamsize>(numel(out.back().shape) * sizeof(double));
    in.ignore(bytes);
    if (in.gcount() != bytes) throw FormatError(FormatError::Kind::Truncated, "checkpoint truncated in tensor data");
  }
  return out;
}

}  // namespace fatsim
