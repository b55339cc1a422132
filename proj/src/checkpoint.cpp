#include "popmech/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "popmech/errors.hpp"

namespace popmech {

using nlohmann::json;

namespace {

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("checkpoint: truncated header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64_le(std::ostream& os, const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, p + i, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k)
      b[k] = static_cast<unsigned char>(bits >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

void get_f64_le(std::istream& is, double* p, std::size_t n) {
  std::vector<unsigned char> buf(n * 8);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!is) throw DataError("checkpoint: truncated tensor payload");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
    std::memcpy(p + i, &bits, 8);
  }
}

}  // namespace

void write_checkpoint(const std::string& path, json header,
                      const std::vector<NamedTensor>& tensors) {
  json tensor_list = json::array();
  for (const NamedTensor& t : tensors)
    tensor_list.push_back({{"name", t.name}, {"shape", t.data.shape()}});
  header["format_version"] = 1;
  header["tensors"] = std::move(tensor_list);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open '" + path + "' for write");
  std::string hs = header.dump();
  put_u64_le(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const NamedTensor& t : tensors)
    put_f64_le(os, t.data.data(), t.data.size());
  if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

std::pair<json, std::vector<NamedTensor>> read_checkpoint(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
  std::uint64_t hlen = get_u64_le(is);
  if (hlen > (1ull << 30))
    throw DataError("checkpoint: implausible header length in '" + path + "'");
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw DataError("checkpoint: truncated header in '" + path + "'");
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw DataError("checkpoint: malformed JSON header in '" + path +
                    "': " + e.what());
  }
  if (!header.contains("format_version") || !header.contains("tensors"))
    throw DataError("checkpoint: header missing format_version/tensors");
  if (header["format_version"].get<int>() != 1)
    throw DataError("checkpoint: unsupported format_version");

  std::vector<NamedTensor> tensors;
  for (const json& tj : header["tensors"]) {
    NamedTensor t;
    t.name = tj.at("name").get<std::string>();
    std::vector<std::size_t> shape =
        tj.at("shape").get<std::vector<std::size_t>>();
    t.data = Array(shape);
    get_f64_le(is, t.data.data(), t.data.size());
    tensors.push_back(std::move(t));
  }
  return {std::move(header), std::move(tensors)};
}

json energy_config_to_json(const energy::EnergyConfig& cfg) {
  return json{{"dim", cfg.dim},
              {"hidden", cfg.hidden},
              {"blocks", cfg.blocks},
              {"heads", cfg.heads},
              {"ff_inner", cfg.ff_inner},
              {"time_features", cfg.time_features},
              {"activation", cfg.activation},
              {"dropout", cfg.dropout}};
}

energy::EnergyConfig energy_config_from_json(const json& j) {
  energy::EnergyConfig cfg;
  try {
    cfg.dim = j.at("dim").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.blocks = j.at("blocks").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ff_inner = j.at("ff_inner").get<std::size_t>();
    cfg.time_features = j.at("time_features").get<std::size_t>();
    cfg.activation = j.at("activation").get<std::string>();
    cfg.dropout = j.at("dropout").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad energy config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_energy_params(const std::string& path,
                        const energy::EnergyConfig& cfg,
                        const energy::EnergyParams& params,
                        const json& extra) {
  energy::AttentionEnergy model(cfg);
  auto specs = model.param_specs();
  if (specs.size() != params.tensors.size())
    throw DataError("checkpoint: params do not match config (want " +
                    std::to_string(specs.size()) + " tensors, have " +
                    std::to_string(params.tensors.size()) + ")");
  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].shape != params.tensors[i].shape())
      throw DataError("checkpoint: tensor '" + specs[i].name +
                      "' has shape " + shape_str(params.tensors[i].shape()) +
                      ", config wants " + shape_str(specs[i].shape));
    tensors.push_back({specs[i].name, params.tensors[i]});
  }
  json header;
  if (!extra.is_null()) header = extra;
  header["kind"] = "energy_params";
  header["config"] = energy_config_to_json(cfg);
  header["seed"] = params.seed;
  write_checkpoint(path, std::move(header), tensors);
}

LoadedEnergyParams load_energy_params(const std::string& path) {
  auto [header, tensors] = read_checkpoint(path);
  if (header.value("kind", "") != "energy_params")
    throw DataError("checkpoint: '" + path + "' is not an energy_params file");
  LoadedEnergyParams out;
  out.config = energy_config_from_json(header.at("config"));
  out.header = header;
  out.params.seed = header.value("seed", 0ull);
  energy::AttentionEnergy model(out.config);
  auto specs = model.param_specs();
  if (specs.size() != tensors.size())
    throw DataError("checkpoint: tensor count does not match config");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (tensors[i].name != specs[i].name ||
        tensors[i].data.shape() != specs[i].shape)
      throw DataError("checkpoint: tensor '" + tensors[i].name +
                      "' does not match config spec '" + specs[i].name + "'");
    if (!tensors[i].data.all_finite())
      throw DataError("checkpoint: tensor '" + tensors[i].name +
                      "' contains non-finite values");
    out.params.tensors.push_back(std::move(tensors[i].data));
  }
  return out;
}

}  // namespace popmech
