#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccbench/datasets.hpp"
#include "ccbench/io.hpp"

#include <filesystem>
#include <set>

using namespace ccbench;
using namespace ccbench::datasets;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

/// Single-linkage clustering with threshold eps; returns the cluster count.
int cluster_count(const Mat& pts, double eps) {
  const Index n = pts.rows();
  std::vector<Index> parent(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
  const std::function<Index(Index)> find = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      if ((pts.row(i) - pts.row(j)).norm() <= eps) {
        parent[static_cast<std::size_t>(find(i))] = find(j);
      }
    }
  }
  std::set<Index> roots;
  for (Index i = 0; i < n; ++i) roots.insert(find(i));
  return static_cast<int>(roots.size());
}

ShapeAttributes chair_attrs(bool armrests, int legs = 4) {
  ShapeAttributes a;
  a.object_class = "chair";
  a.leg_count = legs;
  a.style = "straight";
  a.armrests = armrests;
  a.primary_color = "red";
  a.secondary_color = "black";
  a.material = "wooden";
  return a;
}

}  // namespace

TEST_CASE("sample_shape is deterministic per rng seed") {
  const auto attrs = chair_attrs(true);
  Rng a(5), b(5);
  const auto c1 = sample_shape(attrs, 256, a);
  const auto c2 = sample_shape(attrs, 256, b);
  CHECK(c1.points == c2.points);
  CHECK(c1.colors == c2.colors);
}

TEST_CASE("leg count shows up as disjoint spatial clusters") {
  for (const int legs : {3, 4}) {
    for (const char* cls : {"chair", "table"}) {
      ShapeAttributes a = chair_attrs(false, legs);
      a.object_class = cls;
      a.style = cls == std::string("chair") ? "straight" : "square";
      Rng rng(11 + legs);
      const auto cloud = sample_shape(a, 1024, rng);
      const double zmax = cloud.points.col(2).maxCoeff();
      std::vector<Index> low;
      for (Index i = 0; i < cloud.size(); ++i) {
        if (cloud.points(i, 2) < 0.3 * zmax) low.push_back(i);
      }
      REQUIRE(static_cast<int>(low.size()) > 20 * legs);
      Mat leg_pts(static_cast<Index>(low.size()), 3);
      for (std::size_t i = 0; i < low.size(); ++i) leg_pts.row(static_cast<Index>(i)) = cloud.points.row(low[i]);
      CHECK(cluster_count(leg_pts, 0.12) == legs);
    }
  }
}

TEST_CASE("armless chairs leave the armrest region empty") {
  Rng r1(21), r2(22);
  const auto armless = sample_shape(chair_attrs(false), 1024, r1);
  const auto armed = sample_shape(chair_attrs(true), 1024, r2);
  CHECK(armless.points.col(1).cwiseAbs().maxCoeff() < 0.27);
  CHECK(armed.points.col(1).cwiseAbs().maxCoeff() > 0.27);
}

TEST_CASE("round and rectangular table tops differ as declared") {
  ShapeAttributes a = chair_attrs(false);
  a.object_class = "table";
  a.style = "rectangular";
  Rng r1(31);
  const auto rect = sample_shape(a, 512, r1);
  // rectangular tops are clearly wider in x than y
  CHECK(rect.points.col(0).cwiseAbs().maxCoeff() >
        1.4 * rect.points.col(1).cwiseAbs().maxCoeff());
}

TEST_CASE("captions mention only true attribute values") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    ShapeAttributes a;
    a.object_class = trial % 2 ? "chair" : "table";
    a.leg_count = (trial / 2) % 2 ? 3 : 4;
    const auto& styles = a.object_class == "chair" ? chair_styles() : table_styles();
    a.style = styles[static_cast<std::size_t>(trial) % styles.size()];
    a.armrests = a.object_class == "chair" && trial % 3 == 0;
    a.primary_color = color_names()[static_cast<std::size_t>(trial) % 8];
    a.secondary_color = color_names()[static_cast<std::size_t>(trial / 3) % 8];
    a.material = material_names()[static_cast<std::size_t>(trial) % 4];

    const std::string caption = caption_from_attributes(a, rng);
    const auto m = parse_caption_mentions(caption);

    // every template mentions the full attribute tuple
    REQUIRE(m.object_class.has_value());
    REQUIRE(m.leg_count.has_value());
    REQUIRE(m.style.has_value());
    REQUIRE(m.primary_color.has_value());
    REQUIRE(m.secondary_color.has_value());
    REQUIRE(m.material.has_value());
    CHECK(m.object_class == a.object_class);
    CHECK(m.leg_count == a.leg_count);
    CHECK(m.style == a.style);
    CHECK(m.primary_color == a.primary_color);
    CHECK(m.secondary_color == a.secondary_color);
    CHECK(m.material == a.material);
    if (a.object_class == "chair") {
      REQUIRE(m.armrests.has_value());
      CHECK(m.armrests == a.armrests);
    } else {
      CHECK(!m.armrests.has_value());
    }

    // vocabulary scan: no attribute value absent from attrs appears
    for (const auto& color : color_names()) {
      if (color != a.primary_color && color != a.secondary_color) {
        CHECK(caption.find(color) == std::string::npos);
      }
    }
    for (const auto& mat : material_names()) {
      if (mat != a.material) CHECK(caption.find(mat) == std::string::npos);
    }
    for (const auto& num : number_words()) {
      if ((a.leg_count == 3) != (num == "three")) {
        CHECK(caption.find(num) == std::string::npos);
      }
    }
    const std::string other_class = a.object_class == "chair" ? "table" : "chair";
    CHECK(caption.find(other_class) == std::string::npos);
  }
}

TEST_CASE("captions are deterministic for a fixed rng state") {
  const auto a = chair_attrs(true, 3);
  Rng r1(7), r2(7);
  CHECK(caption_from_attributes(a, r1) == caption_from_attributes(a, r2));
}

TEST_CASE("attribute match score separates differing shapes") {
  Rng rng(51);
  const auto a = chair_attrs(false, 4);
  ShapeAttributes b = a;
  b.secondary_color = "blue";  // differs in one mentioned attribute
  for (int trial = 0; trial < 20; ++trial) {
    const std::string caption = caption_from_attributes(a, rng);
    const auto m = parse_caption_mentions(caption);
    CHECK(attribute_match_score(m, a) > attribute_match_score(m, b));
  }
}

TEST_CASE("generate_synthetic is deterministic and separable") {
  TempDir dir1("ccb_gen1"), dir2("ccb_gen2");
  GenConfig cfg;
  cfg.num_chairs = 6;
  cfg.num_tables = 6;
  cfg.points_per_cloud = 128;
  cfg.seed = 77;

  const auto m1 = generate_synthetic(cfg, dir1.path.string());
  const auto m2 = generate_synthetic(cfg, dir2.path.string());
  REQUIRE(m1.records.size() == 12);

  SUBCASE("same seed gives bit-identical cloud files") {
    for (const auto& rec : m1.records) {
      const auto f1 = io::read_text_file((dir1.path / rec.cloud_path).string());
      const auto f2 = io::read_text_file((dir2.path / rec.cloud_path).string());
      CHECK(f1 == f2);
    }
  }
  SUBCASE("attribute tuples are unique per class") {
    std::set<std::string> seen;
    for (const auto& rec : m1.records) {
      REQUIRE(rec.attributes.has_value());
      const auto j = attributes_to_json(*rec.attributes).dump();
      CHECK(seen.insert(j).second);
    }
  }
  SUBCASE("splits are stratified and non-empty") {
    for (const char* split : {"train", "val", "test"}) {
      CHECK(!m1.split_records(split).empty());
    }
  }
  SUBCASE("every caption matches its own shape best") {
    for (const auto& rec : m1.records) {
      for (const auto& caption : rec.captions) {
        const auto m = parse_caption_mentions(caption);
        const int own = attribute_match_score(m, *rec.attributes);
        for (const auto& other : m1.records) {
          if (other.id == rec.id) continue;
          CHECK(own > attribute_match_score(m, *other.attributes));
        }
      }
    }
  }
}

TEST_CASE("manifest round trip is byte identical") {
  TempDir dir("ccb_manifest");
  GenConfig cfg;
  cfg.num_chairs = 3;
  cfg.num_tables = 3;
  cfg.points_per_cloud = 64;
  cfg.seed = 5;
  auto manifest = generate_synthetic(cfg, dir.path.string());
  manifest.records[0].distractors =
      DistractorRefs{{manifest.records[1].id, manifest.records[2].id},
                     manifest.records[3].id};

  const std::string p1 = (dir.path / "manifest.jsonl").string();
  const std::string p2 = (dir.path / "manifest2.jsonl").string();
  save_manifest(manifest, p1);
  const auto loaded = load_manifest(p1);
  save_manifest(loaded, p2);
  CHECK(io::read_text_file(p1) == io::read_text_file(p2));
  REQUIRE(loaded.records.size() == manifest.records.size());
  CHECK(loaded.records[0].distractors.has_value());
  CHECK(loaded.records[0].distractors->easy == manifest.records[3].id);
}

TEST_CASE("cloud files survive save-load-save byte identically") {
  TempDir dir("ccb_cloud_rt");
  Rng rng(3);
  geometry::ColoredPointCloud cloud;
  cloud.points.resize(32, 3);
  cloud.colors.resize(32, 3);
  for (Index i = 0; i < 32; ++i) {
    for (int c = 0; c < 3; ++c) {
      cloud.points(i, c) = rng.normal();
      cloud.colors(i, c) = rng.uniform_real();
    }
  }
  const std::string p1 = (dir.path / "a.cpc").string();
  const std::string p2 = (dir.path / "b.cpc").string();
  io::write_cloud(p1, cloud);
  io::write_cloud(p2, io::read_cloud(p1));
  CHECK(io::read_text_file(p1) == io::read_text_file(p2));
}

TEST_CASE("manifest validation names the offender") {
  TempDir dir("ccb_manifest_err");
  GenConfig cfg;
  cfg.num_chairs = 2;
  cfg.num_tables = 2;
  cfg.points_per_cloud = 64;
  auto manifest = generate_synthetic(cfg, dir.path.string());

  SUBCASE("empty manifest file") {
    io::write_text_file((dir.path / "empty.jsonl").string(),
                        "{\"schema\":\"ccbench.manifest\",\"version\":1}\n");
    const auto m = load_manifest((dir.path / "empty.jsonl").string());
    CHECK(m.records.empty());
  }
  SUBCASE("duplicate ids") {
    manifest.records.push_back(manifest.records[0]);
    try {
      manifest.validate();
      FAIL("expected throw");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(manifest.records[0].id) != std::string::npos);
    }
  }
  SUBCASE("invalid split vocabulary") {
    manifest.records[1].split = "tset";
    try {
      manifest.validate();
      FAIL("expected throw");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("tset") != std::string::npos);
      CHECK(std::string(e.what()).find(manifest.records[1].id) != std::string::npos);
    }
  }
  SUBCASE("missing cloud file") {
    const std::string path = (dir.path / "m.jsonl").string();
    save_manifest(manifest, path);
    fs::remove(dir.path / manifest.records[2].cloud_path);
    try {
      load_manifest(path);
      FAIL("expected throw");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(manifest.records[2].id) != std::string::npos);
    }
  }
  SUBCASE("malformed record line") {
    const std::string path = (dir.path / "bad.jsonl").string();
    io::write_text_file(path,
                        "{\"schema\":\"ccbench.manifest\",\"version\":1}\n{not json\n");
    CHECK_THROWS_AS(load_manifest(path), ValidationError);
  }
}

TEST_CASE("cloud store caches and errors on unknown ids") {
  TempDir dir("ccb_store");
  GenConfig cfg;
  cfg.num_chairs = 2;
  cfg.num_tables = 2;
  cfg.points_per_cloud = 64;
  const auto manifest = generate_synthetic(cfg, dir.path.string());
  const CloudStore store(manifest, dir.path.string());
  const auto& a = store.get(manifest.records[0].id);
  const auto& b = store.get(manifest.records[0].id);
  CHECK(&a == &b);
  CHECK_THROWS_AS(store.get("nope"), ValidationError);
}

TEST_CASE("cloud fingerprints distinguish shapes and match file payloads") {
  TempDir dir("ccb_fp");
  GenConfig cfg;
  cfg.num_chairs = 2;
  cfg.num_tables = 2;
  cfg.points_per_cloud = 64;
  const auto manifest = generate_synthetic(cfg, dir.path.string());
  const CloudStore store(manifest, dir.path.string());
  std::set<std::uint64_t> fps;
  for (const auto& rec : manifest.records) {
    CHECK(fps.insert(cloud_fingerprint(store.get(rec.id))).second);
  }
}
