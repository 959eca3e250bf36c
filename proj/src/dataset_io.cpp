#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <tuple>

#include "cheer/data.hpp"
#include "cheer/error.hpp"
#include "json.hpp"

namespace cheer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kCsvFile = "data.csv";
constexpr const char* kBinFile = "data.bin";
constexpr const char* kCsvHeader = "sample_id,label,channel,time_index,value";

static_assert(std::endian::native == std::endian::little, "binary blobs assume a little-endian host");

json manifest_json(const DatasetManifest& m) {
  return json{{"format_version", m.format_version},
              {"name", m.name},
              {"role", to_string(m.role)},
              {"n_channels", m.n_channels},
              {"seq_len", m.seq_len},
              {"n_classes", m.n_classes},
              {"n_samples", m.n_samples},
              {"seed", m.seed},
              {"channel_ids", m.channel_ids}};
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw ValidationError("cannot open " + (dir / kManifestFile).string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest " + (dir / kManifestFile).string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.name = j.at("name").get<std::string>();
    m.role = parse_role(j.at("role").get<std::string>());
    m.n_channels = j.at("n_channels").get<std::size_t>();
    m.seq_len = j.at("seq_len").get<std::size_t>();
    m.n_classes = j.at("n_classes").get<std::size_t>();
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.channel_ids = j.at("channel_ids").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ValidationError("manifest " + (dir / kManifestFile).string() + " is missing fields: " + e.what());
  }
  if (m.format_version != DatasetManifest::kFormatVersion) {
    throw ValidationError("unsupported dataset format version " + std::to_string(m.format_version));
  }
  return m;
}

Dataset dataset_from_manifest(const DatasetManifest& m) {
  Dataset d;
  d.name = m.name;
  d.role = m.role;
  d.n_channels = m.n_channels;
  d.seq_len = m.seq_len;
  d.n_classes = m.n_classes;
  d.seed = m.seed;
  d.channel_ids = m.channel_ids;
  return d;
}

void check_count(const DatasetManifest& m, std::size_t found, const std::string& file) {
  if (found != m.n_samples) {
    throw ValidationError("manifest declares " + std::to_string(m.n_samples) + " samples but " + file + " holds " +
                          std::to_string(found));
  }
}

struct CsvRow {
  std::uint64_t sample_id;
  std::size_t label;
  std::size_t channel;
  std::size_t t;
  double value;
};

template <class T>
T parse_field(std::string_view text, std::size_t line_no) {
  T value{};
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("malformed field '" + std::string(text) + "' on line " + std::to_string(line_no) + " of data.csv");
  }
  return value;
}

Dataset read_csv(const fs::path& dir, const DatasetManifest& m) {
  std::ifstream in(dir / kCsvFile);
  if (!in) throw ValidationError("cannot open " + (dir / kCsvFile).string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw ValidationError("data.csv must start with header '" + std::string(kCsvHeader) + "'");
  }
  std::vector<CsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string_view rest(line);
    std::string_view fields[5];
    for (int f = 0; f < 5; ++f) {
      const auto comma = rest.find(',');
      if (f < 4 && comma == std::string_view::npos) {
        throw ValidationError("line " + std::to_string(line_no) + " of data.csv has fewer than 5 fields");
      }
      fields[f] = f < 4 ? rest.substr(0, comma) : rest;
      if (f < 4) rest.remove_prefix(comma + 1);
    }
    if (fields[4].find(',') != std::string_view::npos) {
      throw ValidationError("line " + std::to_string(line_no) + " of data.csv has more than 5 fields");
    }
    rows.push_back(CsvRow{parse_field<std::uint64_t>(fields[0], line_no), parse_field<std::size_t>(fields[1], line_no),
                          parse_field<std::size_t>(fields[2], line_no), parse_field<std::size_t>(fields[3], line_no),
                          parse_field<double>(fields[4], line_no)});
  }
  std::sort(rows.begin(), rows.end(), [](const CsvRow& a, const CsvRow& b) {
    return std::tie(a.sample_id, a.channel, a.t) < std::tie(b.sample_id, b.channel, b.t);
  });

  Dataset d = dataset_from_manifest(m);
  const std::size_t per_sample = m.n_channels * m.seq_len;
  if (per_sample == 0) throw ValidationError("manifest declares an empty sample shape");
  std::size_t i = 0;
  while (i < rows.size()) {
    const std::uint64_t id = rows[i].sample_id;
    std::size_t j = i;
    while (j < rows.size() && rows[j].sample_id == id) ++j;
    if (j - i != per_sample) {
      throw ValidationError("sample " + std::to_string(id) + " has " + std::to_string(j - i) + " rows, expected " +
                            std::to_string(per_sample));
    }
    TimeSeriesSample s;
    s.id = id;
    s.label = rows[i].label;
    s.n_channels = m.n_channels;
    s.seq_len = m.seq_len;
    s.values.resize(per_sample);
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t pos = k - i;
      if (rows[k].channel != pos / m.seq_len || rows[k].t != pos % m.seq_len) {
        throw ValidationError("sample " + std::to_string(id) + " has missing or duplicate (channel, time_index) rows");
      }
      if (rows[k].label != s.label) throw ValidationError("sample " + std::to_string(id) + " has inconsistent labels");
      s.values[pos] = rows[k].value;
    }
    d.samples.push_back(std::move(s));
    i = j;
  }
  check_count(m, d.size(), "data.csv");
  return d;
}

Dataset read_bin(const fs::path& dir, const DatasetManifest& m) {
  std::ifstream in(dir / kBinFile, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + (dir / kBinFile).string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  const std::size_t record = 2 + m.n_channels * m.seq_len;
  if (bytes % (record * sizeof(double)) != 0) {
    throw ValidationError("data.bin size " + std::to_string(bytes) + " is not a whole number of records");
  }
  const std::size_t count = bytes / (record * sizeof(double));
  check_count(m, count, "data.bin");
  Dataset d = dataset_from_manifest(m);
  std::vector<double> buf(record);
  for (std::size_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record * sizeof(double)));
    TimeSeriesSample s;
    s.id = static_cast<std::uint64_t>(buf[0]);
    s.label = static_cast<std::size_t>(buf[1]);
    s.n_channels = m.n_channels;
    s.seq_len = m.seq_len;
    s.values.assign(buf.begin() + 2, buf.end());
    d.samples.push_back(std::move(s));
  }
  std::sort(d.samples.begin(), d.samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return d;
}

}  // namespace

void save_dataset(const Dataset& dataset, const fs::path& dir, bool write_binary) {
  dataset.validate();
  fs::create_directories(dir);
  {
    std::ofstream out(dir / kManifestFile);
    if (!out) throw Error("cannot write " + (dir / kManifestFile).string());
    out << manifest_json(make_manifest(dataset)).dump(2) << '\n';
  }
  std::vector<const TimeSeriesSample*> order;
  for (const auto& s : dataset.samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  {
    std::ofstream out(dir / kCsvFile);
    if (!out) throw Error("cannot write " + (dir / kCsvFile).string());
    out << kCsvHeader << '\n';
    char buf[64];
    for (const auto* s : order) {
      for (std::size_t c = 0; c < s->n_channels; ++c) {
        for (std::size_t t = 0; t < s->seq_len; ++t) {
          std::snprintf(buf, sizeof buf, "%.17g", s->at(c, t));
          out << s->id << ',' << s->label << ',' << c << ',' << t << ',' << buf << '\n';
        }
      }
    }
  }
  if (write_binary) {
    std::ofstream out(dir / kBinFile, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / kBinFile).string());
    for (const auto* s : order) {
      const double header[2] = {static_cast<double>(s->id), static_cast<double>(s->label)};
      out.write(reinterpret_cast<const char*>(header), sizeof header);
      out.write(reinterpret_cast<const char*>(s->values.data()),
                static_cast<std::streamsize>(s->values.size() * sizeof(double)));
    }
  } else {
    fs::remove(dir / kBinFile);
  }
}

Dataset load_dataset(const fs::path& dir, DataFormat format) {
  const DatasetManifest m = read_manifest(dir);
  const bool has_bin = fs::exists(dir / kBinFile);
  Dataset d;
  if (format == DataFormat::Binary || (format == DataFormat::Auto && has_bin)) {
    d = read_bin(dir, m);
  } else {
    d = read_csv(dir, m);
  }
  d.validate();
  return d;
}

void save_paired(const PairedDataset& paired, const fs::path& dir, bool write_binary) {
  paired.validate();
  save_dataset(paired.rich, dir / "rich", write_binary);
  save_dataset(paired.poor, dir / "poor", write_binary);
  json pairs = json::array();
  for (std::size_t i = 0; i < paired.size(); ++i) {
    pairs.push_back({paired.rich.samples[i].id, paired.poor.samples[i].id});
  }
  std::ofstream out(dir / "pairs.json");
  if (!out) throw Error("cannot write " + (dir / "pairs.json").string());
  out << json{{"pairs", pairs}}.dump() << '\n';
}

PairedDataset load_paired(const fs::path& dir, DataFormat format) {
  Dataset rich = load_dataset(dir / "rich", format);
  Dataset poor = load_dataset(dir / "poor", format);
  std::ifstream in(dir / "pairs.json");
  if (!in) throw ValidationError("cannot open " + (dir / "pairs.json").string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed pairs.json: ") + e.what());
  }
  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  try {
    for (const auto& p : j.at("pairs")) pairs.emplace_back(p.at(0).get<std::uint64_t>(), p.at(1).get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed pairs.json: ") + e.what());
  }
  auto index_of = [](const Dataset& d) {
    std::map<std::uint64_t, std::size_t> index;
    for (std::size_t i = 0; i < d.size(); ++i) index[d.samples[i].id] = i;
    return index;
  };
  const auto rich_index = index_of(rich);
  const auto poor_index = index_of(poor);
  PairedDataset out{rich.empty_like(), poor.empty_like()};
  for (const auto& [rid, pid] : pairs) {
    auto r = rich_index.find(rid);
    auto p = poor_index.find(pid);
    if (r == rich_index.end() || p == poor_index.end()) {
      throw ValidationError("pairs.json references unknown sample ids " + std::to_string(rid) + "/" + std::to_string(pid));
    }
    out.rich.samples.push_back(rich.samples[r->second]);
    out.poor.samples.push_back(poor.samples[p->second]);
  }
  if (pairs.size() != rich.size() || pairs.size() != poor.size()) {
    throw ValidationError("pairs.json lists " + std::to_string(pairs.size()) + " pairs for views of size " +
                          std::to_string(rich.size()) + "/" + std::to_string(poor.size()));
  }
  out.validate();
  return out;
}

}  // namespace cheer
