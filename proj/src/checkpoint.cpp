#include <bit>
#include <fstream>

#include "cheer/error.hpp"
#include "cheer/model.hpp"
#include "json.hpp"

namespace cheer {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "params.bin assumes a little-endian host");

void save_checkpoint(const TransferableModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  const Architecture& a = model.arch();
  json conv = json::array();
  for (const auto& layer : a.extractor.conv_layers) {
    conv.push_back({{"filters", layer.filters}, {"kernel", layer.kernel}, {"stride", layer.stride}});
  }
  json blocks = json::array();
  for (const auto& b : model.layout().blocks) blocks.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", b.offset}});
  const json manifest{{"format_version", 1},
                      {"n_channels", a.n_channels},
                      {"seq_len", a.seq_len},
                      {"c", a.n_classes},
                      {"l", a.extractor.n_segments},
                      {"d", a.extractor.rnn_hidden},
                      {"conv_layers", conv},
                      {"mode", to_string(a.scorer_mode)},
                      {"tau", a.temperature},
                      {"seed", model.seed()},
                      {"n_params", model.params().size()},
                      {"blocks", blocks}};
  {
    std::ofstream out(dir / "model.json");
    if (!out) throw Error("cannot write " + (dir / "model.json").string());
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(dir / "params.bin", std::ios::binary);
  if (!out) throw Error("cannot write " + (dir / "params.bin").string());
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(model.params().size() * sizeof(double)));
}

TransferableModel load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw ValidationError("cannot open " + (dir / "model.json").string());
  Architecture a;
  std::uint64_t seed = 0;
  std::size_t n_params = 0;
  try {
    json j;
    in >> j;
    if (j.at("format_version").get<int>() != 1) throw ValidationError("unsupported checkpoint version");
    a.n_channels = j.at("n_channels").get<std::size_t>();
    a.seq_len = j.at("seq_len").get<std::size_t>();
    a.n_classes = j.at("c").get<std::size_t>();
    a.extractor.n_segments = j.at("l").get<std::size_t>();
    a.extractor.rnn_hidden = j.at("d").get<std::size_t>();
    a.extractor.conv_layers.clear();
    for (const auto& layer : j.at("conv_layers")) {
      a.extractor.conv_layers.push_back(
          {layer.at("filters").get<std::size_t>(), layer.at("kernel").get<std::size_t>(), layer.at("stride").get<std::size_t>()});
    }
    a.scorer_mode = parse_scorer_mode(j.at("mode").get<std::string>());
    a.temperature = j.at("tau").get<double>();
    seed = j.at("seed").get<std::uint64_t>();
    n_params = j.at("n_params").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  std::ifstream bin(dir / "params.bin", std::ios::binary | std::ios::ate);
  if (!bin) throw ValidationError("cannot open " + (dir / "params.bin").string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes != n_params * sizeof(double)) {
    throw ValidationError("params.bin holds " + std::to_string(bytes / sizeof(double)) + " values, manifest declares " +
                          std::to_string(n_params));
  }
  bin.seekg(0);
  std::vector<double> params(n_params);
  bin.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(bytes));
  return TransferableModel(a, std::move(params), seed);
}

}  // namespace cheer
