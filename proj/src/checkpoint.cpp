#include "fke/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fke {
namespace {

constexpr char kMagic[4] = {'F', 'K', 'C', 'M'};
constexpr std::uint8_t kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::uint32_t crc(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

std::vector<const ad::Parameter*> all_tensors(const ConceptModel& model, const NoiseModel& noise) {
  auto out = model.parameters();
  for (const auto* p : noise.parameters()) out.push_back(p);
  return out;
}

}  // namespace

void save_checkpoint(const ConceptModel& model, const NoiseModel& noise, const std::filesystem::path& path) {
  const auto tensors = all_tensors(model, noise);
  const auto& d = model.dims();
  nlohmann::json header = {
      {"vocabulary", model.vocabulary().to_json()},
      {"dims",
       {{"image_dim", d.image_dim},
        {"region_dim", d.region_dim},
        {"garment_hidden", d.garment_hidden},
        {"slot_hidden", d.slot_hidden},
        {"slot_embedding", d.slot_embedding}}},
      {"context", model.mode() == EncoderMode::kContextual},
      {"tensors", nlohmann::json::array()}};
  for (const auto* p : tensors) header["tensors"].push_back({{"name", p->name}, {"shape", p->value.shape}});

  std::string bytes(kMagic, kMagic + 4);
  bytes.push_back(static_cast<char>(kVersion));
  const std::string h = header.dump();
  put_u64(bytes, h.size());
  bytes += h;
  for (const auto* p : tensors)
    for (double v : p->value.data) put_u64(bytes, std::bit_cast<std::uint64_t>(v));
  put_u32(bytes, crc(bytes, bytes.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string where = " in checkpoint " + path.string();
  if (bytes.size() < 17 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad magic" + where);
  if (static_cast<std::uint8_t>(bytes[4]) != kVersion)
    throw CheckpointError("unsupported version " + std::to_string(static_cast<unsigned char>(bytes[4])) + where);
  if (get_u32(bytes, bytes.size() - 4) != crc(bytes, bytes.size() - 4)) throw CheckpointError("checksum mismatch" + where);
  const std::uint64_t hlen = get_u64(bytes, 5);
  if (hlen > bytes.size() - 17) throw CheckpointError("truncated header" + where);

  Checkpoint ck;
  std::vector<ad::Parameter*> tensors;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(13, hlen));
    const auto vocab = ConceptVocabulary::from_json(header.at("vocabulary"));
    const auto& jd = header.at("dims");
    ModelDims dims;
    dims.image_dim = jd.at("image_dim");
    dims.region_dim = jd.at("region_dim");
    dims.garment_hidden = jd.at("garment_hidden");
    dims.slot_hidden = jd.at("slot_hidden");
    dims.slot_embedding = jd.at("slot_embedding");
    const auto mode = header.at("context").get<bool>() ? EncoderMode::kContextual : EncoderMode::kNoContext;
    ck.model = ConceptModel(vocab, dims, mode, 0);
    ck.noise = NoiseModel(vocab);
    tensors = ck.model.parameters();
    for (auto* p : ck.noise.parameters()) tensors.push_back(p);
    const auto& table = header.at("tensors");
    if (table.size() != tensors.size())
      throw CheckpointError("expected " + std::to_string(tensors.size()) + " tensors, found " +
                            std::to_string(table.size()) + where);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (table[i].at("name") != tensors[i]->name ||
          table[i].at("shape").get<std::vector<std::size_t>>() != tensors[i]->value.shape)
        throw CheckpointError("tensor " + std::to_string(i) + " does not match the model layout" + where);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed header: ") + e.what() + where);
  } catch (const VocabularyError& e) {
    throw CheckpointError(std::string("bad vocabulary: ") + e.what() + where);
  }

  std::size_t pos = 13 + hlen;
  std::size_t total = 0;
  for (const auto* p : tensors) total += p->value.size();
  if (pos + 8 * total + 4 != bytes.size()) throw CheckpointError("tensor data has the wrong length" + where);
  for (auto* p : tensors) {
    for (double& v : p->value.data) {
      v = std::bit_cast<double>(get_u64(bytes, pos));
      pos += 8;
    }
  }
  return ck;
}

}  // namespace fke
