#include "ccbench/datasets.hpp"

#include "ccbench/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace ccbench::datasets {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// material shows in the build: thin metal tube legs, chunky wooden ones
double leg_width_factor(const std::string& material) {
  if (material == "metal") return 0.55;
  if (material == "plastic") return 0.85;
  if (material == "fabric") return 1.15;
  return 1.45;  // wooden
}

struct Box {
  Eigen::Vector3d center;
  Eigen::Vector3d half;
};

struct Cylinder {  // z-aligned
  Eigen::Vector3d center;
  double radius = 0.0;
  double half_h = 0.0;
};

struct CurvedPanel {  // vertical sheet bowed backward along -x
  double y_half = 0.0;
  double z_lo = 0.0, z_hi = 0.0;
  double x_base = 0.0;
  double sagitta = 0.0;
  double thickness = 0.0;
};

struct Part {
  enum class Kind { box, cylinder, curved } kind = Kind::box;
  Box box;
  Cylinder cyl;
  CurvedPanel panel;
  Eigen::RowVector3d color;
  double weight = 1.0;  // share of the point budget
};

Eigen::Vector3d sample_box_surface(const Box& b, Rng& rng) {
  const double ax = b.half.y() * b.half.z();  // x-normal faces
  const double ay = b.half.x() * b.half.z();
  const double az = b.half.x() * b.half.y();
  const double total = 2.0 * (ax + ay + az);
  double pick = rng.uniform_real() * total;
  const double u = rng.uniform_real() * 2.0 - 1.0;
  const double v = rng.uniform_real() * 2.0 - 1.0;
  const double side = rng.uniform_real() < 0.5 ? -1.0 : 1.0;
  Eigen::Vector3d p;
  if (pick < 2.0 * ax) {
    p = {side * b.half.x(), u * b.half.y(), v * b.half.z()};
  } else if (pick < 2.0 * (ax + ay)) {
    p = {u * b.half.x(), side * b.half.y(), v * b.half.z()};
  } else {
    p = {u * b.half.x(), v * b.half.y(), side * b.half.z()};
  }
  return b.center + p;
}

Eigen::Vector3d sample_cylinder_surface(const Cylinder& c, Rng& rng) {
  const double lateral = 2.0 * kPi * c.radius * (2.0 * c.half_h);
  const double caps = 2.0 * kPi * c.radius * c.radius;
  Eigen::Vector3d p;
  if (rng.uniform_real() * (lateral + caps) < lateral) {
    const double theta = rng.uniform_real() * 2.0 * kPi;
    const double z = (rng.uniform_real() * 2.0 - 1.0) * c.half_h;
    p = {c.radius * std::cos(theta), c.radius * std::sin(theta), z};
  } else {
    const double r = c.radius * std::sqrt(rng.uniform_real());
    const double theta = rng.uniform_real() * 2.0 * kPi;
    const double side = rng.uniform_real() < 0.5 ? -1.0 : 1.0;
    p = {r * std::cos(theta), r * std::sin(theta), side * c.half_h};
  }
  return c.center + p;
}

Eigen::Vector3d sample_panel_surface(const CurvedPanel& cp, Rng& rng) {
  const double u = rng.uniform_real();
  const double v = rng.uniform_real();
  const double y = (2.0 * u - 1.0) * cp.y_half;
  const double z = cp.z_lo + v * (cp.z_hi - cp.z_lo);
  const double bow = cp.sagitta * (1.0 - (2.0 * u - 1.0) * (2.0 * u - 1.0));
  const double side = rng.uniform_real() < 0.5 ? -1.0 : 1.0;
  const double x = cp.x_base - bow + side * cp.thickness * 0.5;
  return {x, y, z};
}

std::vector<Part> build_chair(const ShapeAttributes& a) {
  const Eigen::RowVector3d primary = color_rgb(a.primary_color) * material_tint(a.material);
  const Eigen::RowVector3d secondary =
      color_rgb(a.secondary_color) * material_tint(a.material);

  std::vector<Part> parts;
  const double seat_z = 0.42;
  const double seat_half = 0.24;
  const double thick = leg_width_factor(a.material);

  Part seat;
  seat.kind = Part::Kind::box;
  seat.box = {{0.0, 0.0, seat_z + 0.03 * thick}, {seat_half, seat_half, 0.03 * thick}};
  seat.color = primary;
  seat.weight = 0.28;
  parts.push_back(seat);

  // backrest rises from the back (-x) edge of the seat
  if (a.style == "straight") {
    Part back;
    back.kind = Part::Kind::box;
    back.box = {{-(seat_half - 0.025), 0.0, seat_z + 0.06 + 0.24},
                {0.025 * thick, seat_half, 0.24}};
    back.color = primary;
    back.weight = 0.24;
    parts.push_back(back);
  } else {  // curved
    Part back;
    back.kind = Part::Kind::curved;
    back.panel.y_half = seat_half;
    back.panel.z_lo = seat_z + 0.06;
    back.panel.z_hi = seat_z + 0.06 + 0.48;
    back.panel.x_base = -(seat_half - 0.025);
    back.panel.sagitta = 0.10;
    back.panel.thickness = 0.04 * thick;
    back.color = primary;
    back.weight = 0.24;
    parts.push_back(back);
  }

  const double leg_half_z = seat_z / 2.0;
  const double leg_half_xy = 0.025 * leg_width_factor(a.material);
  std::vector<Eigen::Vector2d> leg_xy;
  const double in = seat_half - 0.05;
  if (a.leg_count == 4) {
    leg_xy = {{in, in}, {in, -in}, {-in, in}, {-in, -in}};
  } else {
    leg_xy = {{in, in}, {in, -in}, {-in, 0.0}};
  }
  for (const auto& xy : leg_xy) {
    Part leg;
    leg.kind = Part::Kind::box;
    leg.box = {{xy.x(), xy.y(), leg_half_z}, {leg_half_xy, leg_half_xy, leg_half_z}};
    leg.color = secondary;
    leg.weight = 0.30 / static_cast<double>(a.leg_count);
    parts.push_back(leg);
  }

  if (a.armrests) {
    for (const double side : {-1.0, 1.0}) {
      Part bar;
      bar.kind = Part::Kind::box;
      bar.box = {{0.02, side * 0.31, seat_z + 0.06 + 0.18}, {0.17, 0.02, 0.02}};
      bar.color = secondary;
      bar.weight = 0.06;
      parts.push_back(bar);

      Part support;
      support.kind = Part::Kind::box;
      support.box = {{0.15, side * 0.31, seat_z + 0.06 + 0.09}, {0.02, 0.02, 0.07}};
      support.color = secondary;
      support.weight = 0.03;
      parts.push_back(support);
    }
  }
  return parts;
}

std::vector<Part> build_table(const ShapeAttributes& a) {
  const Eigen::RowVector3d primary = color_rgb(a.primary_color) * material_tint(a.material);
  const Eigen::RowVector3d secondary =
      color_rgb(a.secondary_color) * material_tint(a.material);

  std::vector<Part> parts;
  const double leg_h = 0.62;
  const double top_t = 0.025 * leg_width_factor(a.material);

  double top_x = 0.5, top_y = 0.5;
  if (a.style == "rectangular") {
    top_x = 0.72;
    top_y = 0.42;
  }

  Part top;
  if (a.style == "round") {
    top.kind = Part::Kind::cylinder;
    top.cyl = {{0.0, 0.0, leg_h + top_t}, 0.52, top_t};
  } else {
    top.kind = Part::Kind::box;
    top.box = {{0.0, 0.0, leg_h + top_t}, {top_x, top_y, top_t}};
  }
  top.color = primary;
  top.weight = 0.55;
  parts.push_back(top);

  std::vector<Eigen::Vector2d> leg_xy;
  if (a.style == "round") {
    const double r = 0.52 * 0.68;
    const int n = a.leg_count;
    for (int i = 0; i < n; ++i) {
      const double theta = kPi / 2.0 + 2.0 * kPi * i / n;
      leg_xy.emplace_back(r * std::cos(theta), r * std::sin(theta));
    }
  } else {
    const double ix = top_x - 0.09, iy = top_y - 0.09;
    if (a.leg_count == 4) {
      leg_xy = {{ix, iy}, {ix, -iy}, {-ix, iy}, {-ix, -iy}};
    } else {
      leg_xy = {{ix, iy}, {ix, -iy}, {-ix, 0.0}};
    }
  }
  const double leg_half_xy = 0.035 * leg_width_factor(a.material);
  for (const auto& xy : leg_xy) {
    Part leg;
    leg.kind = Part::Kind::box;
    leg.box = {{xy.x(), xy.y(), leg_h / 2.0}, {leg_half_xy, leg_half_xy, leg_h / 2.0}};
    leg.color = secondary;
    leg.weight = 0.45 / static_cast<double>(a.leg_count);
    parts.push_back(leg);
  }
  return parts;
}

}  // namespace

ColoredPointCloud sample_shape(const ShapeAttributes& attrs, Index n_points, Rng& rng) {
  validate_attributes(attrs);
  check(n_points >= 16, "sample_shape: need at least 16 points");

  const std::vector<Part> parts =
      attrs.object_class == "chair" ? build_chair(attrs) : build_table(attrs);

  // per-shape size jitter, shared by every part
  const double scale = rng.uniform_real(0.92, 1.08);
  const Eigen::Vector3d axis_jitter{rng.uniform_real(0.97, 1.03),
                                    rng.uniform_real(0.97, 1.03),
                                    rng.uniform_real(0.97, 1.03)};

  // integer point budget per part: floor of the proportional share, the
  // remainder goes to the parts with the largest fractional share
  double weight_sum = 0.0;
  for (const auto& p : parts) weight_sum += p.weight;
  std::vector<Index> counts(parts.size());
  std::vector<std::pair<double, std::size_t>> fracs;
  Index assigned = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double exact = static_cast<double>(n_points) * parts[i].weight / weight_sum;
    counts[i] = static_cast<Index>(std::floor(exact));
    assigned += counts[i];
    fracs.emplace_back(exact - std::floor(exact), i);
  }
  std::sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (Index r = 0; r < n_points - assigned; ++r) {
    ++counts[fracs[static_cast<std::size_t>(r) % fracs.size()].second];
  }

  const double color_noise = material_color_noise(attrs.material);
  ColoredPointCloud cloud;
  cloud.points.resize(n_points, 3);
  cloud.colors.resize(n_points, 3);
  Index row = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Part& part = parts[i];
    for (Index p = 0; p < counts[i]; ++p) {
      Eigen::Vector3d pos;
      switch (part.kind) {
        case Part::Kind::box: pos = sample_box_surface(part.box, rng); break;
        case Part::Kind::cylinder: pos = sample_cylinder_surface(part.cyl, rng); break;
        case Part::Kind::curved: pos = sample_panel_surface(part.panel, rng); break;
      }
      for (int c = 0; c < 3; ++c) {
        pos(c) = pos(c) * scale * axis_jitter(c) + rng.normal() * 0.003;
        cloud.points(row, c) = pos(c);
        cloud.colors(row, c) =
            std::clamp(part.color(c) + rng.normal() * color_noise, 0.0, 1.0);
      }
      ++row;
    }
  }

  // shuffle rows so part boundaries are not encoded in point order
  std::vector<Index> perm(static_cast<std::size_t>(n_points));
  for (Index i = 0; i < n_points; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  ColoredPointCloud out;
  out.points.resize(n_points, 3);
  out.colors.resize(n_points, 3);
  for (Index i = 0; i < n_points; ++i) {
    out.points.row(i) = cloud.points.row(perm[static_cast<std::size_t>(i)]);
    out.colors.row(i) = cloud.colors.row(perm[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::string caption_from_attributes(const ShapeAttributes& a, Rng& rng) {
  validate_attributes(a);
  const std::string legs = a.leg_count == 3 ? "three" : "four";
  const std::string& pc = a.primary_color;
  const std::string& sc = a.secondary_color;
  const std::string& mat = a.material;
  const std::string& style = a.style;

  if (a.object_class == "chair") {
    const std::string arm = a.armrests ? "with armrests" : "armless";
    switch (rng.uniform_u64(6)) {
      case 0:
        return "a " + pc + " " + mat + " chair with a " + style + " backrest and " +
               legs + " " + sc + " legs, " + arm;
      case 1:
        return "this " + mat + " chair is " + pc + ", with " + legs + " " + sc +
               " legs and a " + style + " backrest, " + arm;
      case 2:
        return a.armrests
                   ? "a " + pc + " " + mat + " chair with armrests, standing on " +
                         legs + " " + sc + " legs with a " + style + " backrest"
                   : "an armless " + pc + " " + mat + " chair standing on " + legs +
                         " " + sc + " legs with a " + style + " backrest";
      case 3:
        return "a chair with " + legs + " " + sc + " legs, a " + style +
               " backrest and a " + pc + " " + mat + " finish, " + arm;
      case 4:
        return pc + " " + mat + " chair, " + style + " backrest, " + legs + " " + sc +
               " legs, " + arm;
      default:
        return "a " + mat + " chair in " + pc + " with a " + style + " backrest, " +
               arm + ", resting on " + legs + " " + sc + " legs";
    }
  }
  switch (rng.uniform_u64(5)) {
    case 0:
      return "a " + pc + " " + mat + " table with a " + style + " top and " + legs +
             " " + sc + " legs";
    case 1:
      return "this " + mat + " table has a " + style + " " + pc + " top and stands on " +
             legs + " " + sc + " legs";
    case 2:
      return "a table with a " + style + " top, " + legs + " " + sc +
             " legs and a " + pc + " " + mat + " finish";
    case 3:
      return pc + " " + mat + " table, " + style + " top, " + legs + " " + sc + " legs";
    default:
      return "a " + mat + " table in " + pc + " with " + legs + " " + sc +
             " legs under a " + style + " top";
  }
}

namespace {

ShapeAttributes decode_attrs(const std::string& cls, std::uint64_t index) {
  ShapeAttributes a;
  a.object_class = cls;
  const auto& styles = cls == "chair" ? chair_styles() : table_styles();
  const auto& colors = color_names();
  const auto& mats = material_names();

  a.leg_count = index % 2 == 0 ? 3 : 4;
  index /= 2;
  a.style = styles[index % styles.size()];
  index /= styles.size();
  if (cls == "chair") {
    a.armrests = index % 2 == 1;
    index /= 2;
  }
  a.primary_color = colors[index % colors.size()];
  index /= colors.size();
  a.secondary_color = colors[index % colors.size()];
  index /= colors.size();
  a.material = mats[index % mats.size()];
  return a;
}

std::uint64_t combo_capacity(const std::string& cls) {
  const auto& styles = cls == "chair" ? chair_styles() : table_styles();
  std::uint64_t cap = 2 * styles.size() * color_names().size() * color_names().size() *
                      material_names().size();
  if (cls == "chair") cap *= 2;
  return cap;
}

}  // namespace

DatasetManifest generate_synthetic(const GenConfig& cfg, const std::string& out_dir) {
  check(cfg.num_chairs >= 1 && cfg.num_tables >= 1,
        "generate_synthetic: counts must be >= 1");
  check(cfg.points_per_cloud >= 16, "generate_synthetic: need >= 16 points per cloud");
  check(cfg.captions_min >= 1 && cfg.captions_max >= cfg.captions_min,
        "generate_synthetic: bad caption counts");
  check(cfg.train_fraction > 0 && cfg.val_fraction >= 0 &&
            cfg.train_fraction + cfg.val_fraction < 1.0,
        "generate_synthetic: bad split fractions");

  const Rng root(cfg.seed);
  fs::create_directories(fs::path(out_dir) / "clouds");

  DatasetManifest manifest;
  std::size_t shape_index = 0;
  for (const std::string& cls : class_names()) {
    const Index count = cls == "chair" ? cfg.num_chairs : cfg.num_tables;
    const std::uint64_t cap = combo_capacity(cls);
    check(static_cast<std::uint64_t>(count) <= cap,
          "generate_synthetic: at most " + std::to_string(cap) + " distinct " + cls +
              " attribute combinations exist");

    // distinct attribute tuples per class, sampled without replacement
    std::vector<std::uint64_t> combos(cap);
    for (std::uint64_t i = 0; i < cap; ++i) combos[i] = i;
    Rng combo_rng = root.derive("attrs", cls);
    combo_rng.shuffle(combos);

    // stratified splits inside each class
    std::vector<Index> order(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng split_rng = root.derive("split", cls);
    split_rng.shuffle(order);
    auto n_train = static_cast<Index>(
        std::floor(cfg.train_fraction * static_cast<double>(count)));
    auto n_val =
        static_cast<Index>(std::floor(cfg.val_fraction * static_cast<double>(count)));
    // small classes still get non-empty val and test splits
    if (count >= 3) {
      if (n_val == 0) n_val = 1;
      while (count - n_train - n_val < 1 && n_train > 1) --n_train;
    }
    std::vector<std::string> splits(static_cast<std::size_t>(count));
    for (Index rank = 0; rank < count; ++rank) {
      const char* s = rank < n_train ? "train" : (rank < n_train + n_val ? "val" : "test");
      splits[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] = s;
    }

    for (Index i = 0; i < count; ++i) {
      char id_buf[32];
      std::snprintf(id_buf, sizeof(id_buf), "%s_%04lld", cls.c_str(),
                    static_cast<long long>(i));
      ManifestRecord rec;
      rec.id = id_buf;
      rec.class_label = cls;
      rec.split = splits[static_cast<std::size_t>(i)];
      rec.cloud_path = "clouds/" + rec.id + ".cpc";
      rec.attributes = decode_attrs(cls, combos[static_cast<std::size_t>(i)]);

      Rng shape_rng = root.derive("shape", fnv1a64(rec.id));
      const ColoredPointCloud cloud =
          sample_shape(*rec.attributes, cfg.points_per_cloud, shape_rng);
      io::write_cloud((fs::path(out_dir) / rec.cloud_path).string(), cloud);

      Rng caption_rng = root.derive("captions", fnv1a64(rec.id));
      const Index n_captions =
          cfg.captions_min +
          static_cast<Index>(caption_rng.uniform_u64(
              static_cast<std::uint64_t>(cfg.captions_max - cfg.captions_min + 1)));
      for (Index c = 0; c < n_captions; ++c) {
        std::string caption = caption_from_attributes(*rec.attributes, caption_rng);
        for (int attempt = 0; attempt < 20; ++attempt) {
          if (std::find(rec.captions.begin(), rec.captions.end(), caption) ==
              rec.captions.end()) {
            break;
          }
          caption = caption_from_attributes(*rec.attributes, caption_rng);
        }
        rec.captions.push_back(std::move(caption));
      }
      manifest.records.push_back(std::move(rec));
      ++shape_index;
    }
  }

  manifest.meta = {{"generator", "synthetic-furniture"},
                   {"seed", cfg.seed},
                   {"points_per_cloud", cfg.points_per_cloud}};
  manifest.validate();
  return manifest;
}

}  // namespace ccbench::datasets
