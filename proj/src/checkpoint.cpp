#include "p2c/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "p2c/errors.hpp"

namespace p2c::model {

namespace {

constexpr char kMagic[8] = {'P', '2', 'C', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << h;
  return s.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Parameters& params, const tok::Vocabulary& src_vocab,
                     const tok::Vocabulary& tgt_vocab) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["config"] = to_json(params.config());
  header["src_vocab"] = src_vocab.to_json();
  header["tgt_vocab"] = tgt_vocab.to_json();
  header["arrays"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.arrays().size(); ++i) {
    header["arrays"].push_back(
        {{"name", params.names()[i]}, {"rows", params.arrays()[i].rows()}, {"cols", params.arrays()[i].cols()}});
  }
  const std::string h = header.dump();

  std::string bytes(kMagic, sizeof(kMagic));
  put<std::uint32_t>(bytes, kVersion);
  put<std::uint64_t>(bytes, h.size());
  bytes += h;
  for (const auto& a : params.arrays()) {
    bytes.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(double));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = take<std::uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw CheckpointError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  pos += hlen;

  Checkpoint ck{Parameters(model_config_from_json(header.at("config"))),
                tok::Vocabulary::from_json(header.at("src_vocab")), tok::Vocabulary::from_json(header.at("tgt_vocab")),
                digest(bytes)};
  const auto& cfg = ck.params.config();
  if (ck.src_vocab.size() != cfg.src_vocab || ck.tgt_vocab.size() != cfg.tgt_vocab) {
    throw CheckpointError("checkpoint vocabulary sizes disagree with its config");
  }
  const auto& arrays = header.at("arrays");
  if (arrays.size() != ck.params.arrays().size()) throw CheckpointError("checkpoint array count mismatch");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    Matrix& m = ck.params.arrays()[i];
    if (arrays[i].at("name").get<std::string>() != ck.params.names()[i] ||
        arrays[i].at("rows").get<std::size_t>() != m.rows() || arrays[i].at("cols").get<std::size_t>() != m.cols()) {
      throw CheckpointError("checkpoint array " + std::to_string(i) + " does not match the configured shape");
    }
    const std::size_t n = m.size() * sizeof(double);
    if (pos + n > bytes.size()) throw CheckpointError("checkpoint data truncated");
    std::memcpy(m.data(), bytes.data() + pos, n);
    pos += n;
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint data");
  return ck;
}

}  // namespace p2c::model
