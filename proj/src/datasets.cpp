#include "ccbench/datasets.hpp"

#include "ccbench/encoders.hpp"
#include "ccbench/hash.hpp"
#include "ccbench/io.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ccbench::datasets {

namespace fs = std::filesystem;

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> v{"chair", "table"};
  return v;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> v{"red",    "green", "blue",  "yellow",
                                          "orange", "purple", "white", "black"};
  return v;
}

const std::vector<std::string>& chair_styles() {
  static const std::vector<std::string> v{"straight", "curved"};
  return v;
}

const std::vector<std::string>& table_styles() {
  static const std::vector<std::string> v{"round", "square", "rectangular"};
  return v;
}

const std::vector<std::string>& material_names() {
  static const std::vector<std::string> v{"wooden", "metal", "plastic", "fabric"};
  return v;
}

const std::vector<std::string>& number_words() {
  static const std::vector<std::string> v{"three", "four"};
  return v;
}

Eigen::RowVector3d color_rgb(const std::string& name) {
  if (name == "red") return {0.85, 0.10, 0.10};
  if (name == "green") return {0.10, 0.65, 0.15};
  if (name == "blue") return {0.12, 0.20, 0.80};
  if (name == "yellow") return {0.90, 0.85, 0.10};
  if (name == "orange") return {0.95, 0.55, 0.10};
  if (name == "purple") return {0.55, 0.15, 0.65};
  if (name == "white") return {0.95, 0.95, 0.95};
  if (name == "black") return {0.06, 0.06, 0.06};
  throw ValidationError("unknown color name: " + name);
}

double material_tint(const std::string& name) {
  if (name == "wooden") return 0.72;
  if (name == "metal") return 1.00;
  if (name == "plastic") return 0.86;
  if (name == "fabric") return 0.52;
  throw ValidationError("unknown material name: " + name);
}

double material_color_noise(const std::string& name) {
  if (name == "wooden") return 0.035;  // grain
  if (name == "metal") return 0.005;
  if (name == "plastic") return 0.014;
  if (name == "fabric") return 0.055;  // weave
  throw ValidationError("unknown material name: " + name);
}

namespace {

bool contains(const std::vector<std::string>& pool, const std::string& v) {
  return std::find(pool.begin(), pool.end(), v) != pool.end();
}

}  // namespace

void validate_attributes(const ShapeAttributes& a) {
  check(contains(class_names(), a.object_class), "attributes: unknown class " + a.object_class);
  check(a.leg_count == 3 || a.leg_count == 4,
        "attributes: leg count must be 3 or 4, got " + std::to_string(a.leg_count));
  const auto& styles = a.object_class == "chair" ? chair_styles() : table_styles();
  check(contains(styles, a.style), "attributes: unknown style " + a.style);
  check(contains(color_names(), a.primary_color),
        "attributes: unknown color " + a.primary_color);
  check(contains(color_names(), a.secondary_color),
        "attributes: unknown color " + a.secondary_color);
  check(contains(material_names(), a.material), "attributes: unknown material " + a.material);
  check(a.object_class == "chair" || !a.armrests, "attributes: tables cannot have armrests");
}

json attributes_to_json(const ShapeAttributes& a) {
  json j;
  j["class"] = a.object_class;
  j["legs"] = a.leg_count;
  j["style"] = a.style;
  j["armrests"] = a.armrests;
  j["primary_color"] = a.primary_color;
  j["secondary_color"] = a.secondary_color;
  j["material"] = a.material;
  return j;
}

ShapeAttributes attributes_from_json(const json& j) {
  ShapeAttributes a;
  a.object_class = j.at("class").get<std::string>();
  a.leg_count = j.at("legs").get<int>();
  a.style = j.at("style").get<std::string>();
  a.armrests = j.at("armrests").get<bool>();
  a.primary_color = j.at("primary_color").get<std::string>();
  a.secondary_color = j.at("secondary_color").get<std::string>();
  a.material = j.at("material").get<std::string>();
  validate_attributes(a);
  return a;
}

bool DatasetManifest::has(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return true;
  }
  return false;
}

const ManifestRecord& DatasetManifest::by_id(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw ValidationError("manifest: unknown shape id " + id);
}

ManifestRecord& DatasetManifest::by_id(const std::string& id) {
  for (auto& r : records) {
    if (r.id == id) return r;
  }
  throw ValidationError("manifest: unknown shape id " + id);
}

std::vector<const ManifestRecord*> DatasetManifest::split_records(
    const std::string& split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

void DatasetManifest::validate() const {
  std::map<std::string, int> seen;
  for (const auto& r : records) {
    check(!r.id.empty(), "manifest: record with empty id");
    if (++seen[r.id] > 1) throw ValidationError("manifest: duplicate shape id " + r.id);
    if (r.split != "train" && r.split != "val" && r.split != "test") {
      throw ValidationError("manifest: record " + r.id + ": invalid split \"" + r.split + "\"");
    }
    check(!r.cloud_path.empty(), "manifest: record " + r.id + ": empty cloud path");
    if (r.attributes) validate_attributes(*r.attributes);
  }
}

namespace {

json record_to_json(const ManifestRecord& r) {
  json j;
  j["id"] = r.id;
  j["cloud"] = r.cloud_path;
  j["class"] = r.class_label;
  j["captions"] = r.captions;
  j["split"] = r.split;
  if (r.attributes) j["attributes"] = attributes_to_json(*r.attributes);
  if (r.distractors) {
    j["distractors"] = {{"hard", {r.distractors->hard[0], r.distractors->hard[1]}},
                        {"easy", r.distractors->easy}};
  }
  return j;
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.cloud_path = j.at("cloud").get<std::string>();
  r.class_label = j.at("class").get<std::string>();
  r.captions = j.at("captions").get<std::vector<std::string>>();
  r.split = j.at("split").get<std::string>();
  if (j.contains("attributes")) r.attributes = attributes_from_json(j.at("attributes"));
  if (j.contains("distractors")) {
    DistractorRefs d;
    const auto& dj = j.at("distractors");
    const auto hard = dj.at("hard").get<std::vector<std::string>>();
    check(hard.size() == 2, "manifest: record " + r.id + ": needs exactly 2 hard distractors");
    d.hard = {hard[0], hard[1]};
    d.easy = dj.at("easy").get<std::string>();
    r.distractors = d;
  }
  return r;
}

}  // namespace

std::string manifest_directory(const std::string& manifest_path) {
  const fs::path p(manifest_path);
  const fs::path dir = p.parent_path();
  return dir.empty() ? std::string(".") : dir.string();
}

DatasetManifest load_manifest(const std::string& path, bool check_files) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);

  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("manifest " + path + " line " + std::to_string(line_no) +
                            ": malformed record: " + e.what());
    }
    if (!have_header) {
      check(j.value("schema", "") == "ccbench.manifest",
            "manifest " + path + ": missing or wrong schema header");
      m.version = j.at("version").get<int>();
      check(m.version == 1, "manifest " + path + ": unsupported version " +
                                std::to_string(m.version));
      if (j.contains("meta")) m.meta = j.at("meta");
      have_header = true;
      continue;
    }
    try {
      m.records.push_back(record_from_json(j));
    } catch (const json::exception& e) {
      throw ValidationError("manifest " + path + " line " + std::to_string(line_no) +
                            ": malformed record: " + e.what());
    }
  }
  check(have_header, "manifest " + path + ": empty file (missing header)");
  m.validate();

  if (check_files) {
    const std::string dir = manifest_directory(path);
    for (const auto& r : m.records) {
      const fs::path cloud = fs::path(dir) / r.cloud_path;
      if (!fs::exists(cloud)) {
        throw ValidationError("manifest: record " + r.id +
                              ": cloud file not found: " + cloud.string());
      }
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  manifest.validate();
  std::ostringstream out;
  json header;
  header["schema"] = "ccbench.manifest";
  header["version"] = manifest.version;
  if (!manifest.meta.is_null()) header["meta"] = manifest.meta;
  out << header.dump() << "\n";
  for (const auto& r : manifest.records) {
    out << record_to_json(r).dump() << "\n";
  }
  io::write_text_file(path, out.str());
}

CloudStore::CloudStore(const DatasetManifest& manifest, const std::string& manifest_dir) {
  for (const auto& r : manifest.records) {
    paths_[r.id] = (fs::path(manifest_dir) / r.cloud_path).string();
  }
}

std::string CloudStore::path_of(const std::string& id) const {
  const auto it = paths_.find(id);
  if (it == paths_.end()) throw ValidationError("cloud store: unknown shape id " + id);
  return it->second;
}

const ColoredPointCloud& CloudStore::get(const std::string& id) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = cache_.find(id);
    if (it != cache_.end()) return *it->second;
  }
  auto cloud = std::make_unique<ColoredPointCloud>(io::read_cloud(path_of(id)));
  std::lock_guard<std::mutex> lock(mu_);
  const auto [it, inserted] = cache_.emplace(id, std::move(cloud));
  return *it->second;
}

std::uint64_t cloud_fingerprint(const ColoredPointCloud& cloud) {
  std::string buf;
  buf.reserve(static_cast<std::size_t>(cloud.size()) * 24);
  const auto push_f32 = [&buf](double v) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<char>((bits >> s) & 0xff));
  };
  for (Index i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) push_f32(cloud.points(i, c));
    for (int c = 0; c < 3; ++c) push_f32(cloud.colors(i, c));
  }
  return fnv1a64(buf.data(), buf.size());
}

int MentionedAttributes::mention_count() const {
  int n = 0;
  n += object_class.has_value();
  n += leg_count.has_value();
  n += style.has_value();
  n += armrests.has_value();
  n += primary_color.has_value();
  n += secondary_color.has_value();
  n += material.has_value();
  return n;
}

MentionedAttributes parse_caption_mentions(const std::string& caption) {
  const std::vector<std::string> tokens = encoders::tokenize_words(caption);
  MentionedAttributes m;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (!m.object_class && contains(class_names(), t)) m.object_class = t;
    if (!m.leg_count) {
      if (t == "three") m.leg_count = 3;
      if (t == "four") m.leg_count = 4;
    }
    if (!m.style && (contains(chair_styles(), t) || contains(table_styles(), t))) {
      m.style = t;
    }
    if (!m.material && contains(material_names(), t)) m.material = t;
    if (t == "armless") m.armrests = false;
    if (t == "armrests" && i > 0 && tokens[i - 1] == "with") m.armrests = true;
    if (contains(color_names(), t)) {
      const bool before_legs = i + 1 < tokens.size() && tokens[i + 1] == "legs";
      if (before_legs) {
        if (!m.secondary_color) m.secondary_color = t;
      } else if (!m.primary_color) {
        m.primary_color = t;
      }
    }
  }
  return m;
}

int attribute_match_score(const MentionedAttributes& m, const ShapeAttributes& a) {
  int score = 0;
  const auto tally = [&score](bool mentioned, bool matches) {
    if (mentioned) score += matches ? 1 : -1;
  };
  tally(m.object_class.has_value(), m.object_class == a.object_class);
  tally(m.leg_count.has_value(), m.leg_count == a.leg_count);
  tally(m.style.has_value(), m.style == a.style);
  tally(m.armrests.has_value(), m.armrests == a.armrests);
  tally(m.primary_color.has_value(), m.primary_color == a.primary_color);
  tally(m.secondary_color.has_value(), m.secondary_color == a.secondary_color);
  tally(m.material.has_value(), m.material == a.material);
  return score;
}

}  // namespace ccbench::datasets
