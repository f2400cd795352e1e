#include "conflictqa/reader/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "conflictqa/errors.hpp"

namespace conflictqa::reader {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'Q', 'A', 'R', 'D', 'R', '0', '1'};
constexpr int kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

nlohmann::json history_to_json(const std::vector<EpochRecord>& history) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : history)
    out.push_back({{"epoch", r.epoch},
                   {"l_qa", r.loss.l_qa},
                   {"l_bce", r.loss.l_bce},
                   {"l_contra", r.loss.l_contra},
                   {"total", r.loss.total}});
  return out;
}

}  // namespace

void round_to_f32(ReaderModel& model) {
  for (auto* p : model.parameters())
    for (double& v : p->value.data) v = static_cast<double>(static_cast<float>(v));
}

void save_checkpoint(const std::filesystem::path& path, const ReaderModel& model,
                     const std::vector<EpochRecord>& history) {
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : model.parameters()) {
    tensors.push_back({{"name", p->name},
                       {"shape", {p->value.rows, p->value.cols}},
                       {"offset", payload.size()},
                       {"dtype", "f32le"}});
    for (double v : p->value.data) put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  const nlohmann::json header{{"format", "conflictqa-reader"},
                              {"version", kVersion},
                              {"config", model.config().to_json()},
                              {"vocab", model.vocab().to_json()},
                              {"history", history_to_json(history)},
                              {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kMagic.begin(), kMagic.end());
  put_u64(out, h.size());
  out += h;
  out += payload;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 16 || !std::equal(kMagic.begin(), kMagic.end(), in.begin()))
    throw ValidationError(path.string() + " is not a reader checkpoint");
  const std::uint64_t hlen = get_u(in, 8, 8);
  if (16 + hlen > in.size()) throw ValidationError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != "conflictqa-reader" || header.value("version", 0) != kVersion)
    throw ValidationError("unsupported checkpoint format");

  ReaderModel model(ReaderConfig::from_json(header.at("config")), Vocabulary::from_json(header.at("vocab")));
  const std::size_t base = 16 + hlen;
  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : header.at("tensors")) entries[t.at("name").get<std::string>()] = t;
  for (auto* p : model.parameters()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw ConfigError("checkpoint lacks tensor " + p->name);
    const auto shape = it->second.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p->value.rows || shape[1] != p->value.cols)
      throw ConfigError("tensor " + p->name + " has the wrong shape");
    if (it->second.at("dtype") != "f32le") throw ValidationError("unsupported dtype for " + p->name);
    const std::size_t off = base + it->second.at("offset").get<std::size_t>();
    if (off + 4 * p->value.size() > in.size()) throw ValidationError("truncated tensor " + p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i)
      p->value.data[i] = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_u(in, off + 4 * i, 4))));
  }

  std::vector<EpochRecord> history;
  for (const auto& r : header.at("history"))
    history.push_back({r.at("epoch").get<std::size_t>(),
                       LossBreakdown{r.at("l_qa"), r.at("l_bce"), r.at("l_contra"), r.at("total")}});
  return {std::move(model), std::move(history)};
}

}  // namespace conflictqa::reader
