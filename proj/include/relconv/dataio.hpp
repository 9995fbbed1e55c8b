#pragma once

// Metadata CSV ingestion, split assignment, the dataset manifest and the
// ground-truth box CSV.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "relconv/error.hpp"
#include "relconv/image.hpp"
#include "relconv/metrics.hpp"
#include "relconv/records.hpp"
#include "relconv/rng.hpp"

namespace relconv {

using GroundTruthBox = LabeledBox;

inline const std::vector<std::string>& chestxray14_classes() {
  static const std::vector<std::string> names{
      "Atelectasis", "Cardiomegaly", "Effusion",     "Infiltration",       "Mass",     "Nodule",   "Pneumonia",
      "Pneumothorax", "Consolidation", "Edema", "Emphysema", "Fibrosis", "Pleural_Thickening", "Hernia"};
  return names;
}

inline constexpr const char* kNoFinding = "No Finding";

// ---------------------------------------------------------------- CSV

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q.push_back('"');
    q.push_back(ch);
  }
  return q + "\"";
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("missing CSV column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() < t.header.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields");
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (t.header.empty()) throw ValidationError("empty CSV " + path.string());
  return t;
}

// ---------------------------------------------------------------- splits

/// Either an explicit id -> split file or a ratio triple with a seed.
struct SplitSpec {
  std::optional<std::filesystem::path> file;
  std::array<double, 3> ratio{0.7, 0.2, 0.1};
  std::uint64_t seed = 0;
};

/// Assigns splits by ratio: ids are sorted, shuffled with `seed`, and the
/// first round(n * r_train) go to train, the next round(n * r_val) to val.
inline std::map<std::string, Split> split_by_ratio(std::vector<std::string> ids, const std::array<double, 3>& ratio,
                                                   std::uint64_t seed) {
  const double total = ratio[0] + ratio[1] + ratio[2];
  if (!(ratio[0] >= 0 && ratio[1] >= 0 && ratio[2] >= 0 && total > 0)) throw ConfigError("invalid split ratio");
  std::sort(ids.begin(), ids.end());
  SplitMix64 rng(seed);
  shuffle(ids, rng);
  const double n = static_cast<double>(ids.size());
  const std::size_t n_train = std::min(ids.size(), static_cast<std::size_t>(std::llround(n * ratio[0] / total)));
  const std::size_t n_val =
      std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(n * ratio[1] / total)));
  std::map<std::string, Split> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    out[ids[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
  return out;
}

/// Reads an id -> split CSV with columns image_id, split.
inline std::map<std::string, Split> read_split_file(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t id = t.column("image_id"), sp = t.column("split");
  std::map<std::string, Split> out;
  for (const auto& row : t.rows) out[row[id]] = parse_split(row[sp]);
  return out;
}

// ---------------------------------------------------------------- metadata

/// Accepts "58", "058" or "058Y".
inline int parse_age(const std::string& s) {
  std::string digits = s;
  if (!digits.empty() && (digits.back() == 'Y' || digits.back() == 'y')) digits.pop_back();
  if (digits.empty() || digits.size() > 3 ||
      !std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ValidationError("malformed age '" + s + "'");
  return std::stoi(digits);
}

inline std::vector<std::uint8_t> parse_finding_labels(const std::string& field,
                                                      const std::vector<std::string>& class_names,
                                                      const std::string& where) {
  std::vector<std::uint8_t> labels(class_names.size(), 0);
  if (field == kNoFinding || field.empty()) return labels;
  std::stringstream ss(field);
  std::string name;
  while (std::getline(ss, name, '|')) {
    auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end()) throw ValidationError(where + ": unknown label '" + name + "'");
    labels[static_cast<std::size_t>(it - class_names.begin())] = 1;
  }
  return labels;
}

inline std::string format_finding_labels(const std::vector<std::uint8_t>& labels,
                                         const std::vector<std::string>& class_names) {
  std::string out;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (!labels[c]) continue;
    if (!out.empty()) out += '|';
    out += class_names[c];
  }
  return out.empty() ? kNoFinding : out;
}

/// Throws if image ids repeat or a patient appears with two genders.
inline void validate_records(const std::vector<ImageRecord>& records) {
  std::set<std::string> ids;
  std::unordered_map<std::string, Gender> gender;
  for (const auto& r : records) {
    if (!ids.insert(r.image_id).second) throw ValidationError("duplicate image id '" + r.image_id + "'");
    auto [it, inserted] = gender.emplace(r.patient_id, r.gender);
    if (!inserted && it->second != r.gender)
      throw ValidationError("patient '" + r.patient_id + "' has inconsistent gender (image '" + r.image_id + "')");
  }
}

/// Loads a Data_Entry-style CSV (Image Index, Finding Labels, Patient ID,
/// Patient Age, Patient Gender, View Position) and assigns splits.
inline std::vector<ImageRecord> load_metadata(const std::filesystem::path& csv_path, const SplitSpec& split,
                                              const std::vector<std::string>& class_names = chestxray14_classes()) {
  const CsvTable t = read_csv(csv_path);
  const std::size_t c_id = t.column("Image Index"), c_lab = t.column("Finding Labels"),
                    c_pat = t.column("Patient ID"), c_age = t.column("Patient Age"),
                    c_gen = t.column("Patient Gender"), c_view = t.column("View Position");
  std::vector<ImageRecord> records;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = csv_path.string() + ":" + std::to_string(t.line_numbers[i]);
    try {
      ImageRecord r;
      r.image_id = row[c_id];
      r.patient_id = row[c_pat];
      r.age = parse_age(row[c_age]);
      r.gender = parse_gender(row[c_gen]);
      r.view = parse_view(row[c_view]);
      r.labels = parse_finding_labels(row[c_lab], class_names, where);
      records.push_back(std::move(r));
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      throw ValidationError(msg.rfind(where, 0) == 0 ? msg : where + ": " + msg);
    }
  }
  validate_records(records);

  std::map<std::string, Split> assignment;
  if (split.file) {
    assignment = read_split_file(*split.file);
  } else {
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.image_id);
    assignment = split_by_ratio(std::move(ids), split.ratio, split.seed);
  }
  for (auto& r : records) {
    auto it = assignment.find(r.image_id);
    if (it == assignment.end()) throw ValidationError("no split assigned to '" + r.image_id + "'");
    r.split = it->second;
  }
  return records;
}

inline void write_metadata_csv(const std::filesystem::path& path, const std::vector<ImageRecord>& records,
                               const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "Image Index,Finding Labels,Patient ID,Patient Age,Patient Gender,View Position\n";
  for (const auto& r : records) {
    out << csv_field(r.image_id) << ',' << csv_field(format_finding_labels(r.labels, class_names)) << ','
        << csv_field(r.patient_id) << ',' << r.age << ',' << to_string(r.gender) << ',' << to_string(r.view) << '\n';
  }
}

// ---------------------------------------------------------------- manifest

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::filesystem::path image_dir;
  std::size_t image_size = 64;
  std::size_t channels = 1;
  std::vector<std::string> class_names;

  std::size_t class_count() const { return class_names.size(); }
  std::filesystem::path image_path(const ImageRecord& r) const { return image_dir / r.image_id; }
};

inline nlohmann::json record_to_json(const ImageRecord& r) {
  return {{"image_id", r.image_id},
          {"patient_id", r.patient_id},
          {"age", r.age},
          {"gender", to_string(r.gender)},
          {"view", to_string(r.view)},
          {"labels", r.labels},
          {"split", to_string(r.split)}};
}

inline ImageRecord record_from_json(const nlohmann::json& j, std::size_t classes) {
  ImageRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.patient_id = j.at("patient_id").get<std::string>();
  r.age = j.at("age").get<int>();
  r.gender = parse_gender(j.at("gender").get<std::string>());
  r.view = parse_view(j.at("view").get<std::string>());
  r.labels = j.at("labels").get<std::vector<std::uint8_t>>();
  r.split = parse_split(j.at("split").get<std::string>());
  if (r.labels.size() != classes)
    throw ValidationError("record '" + r.image_id + "' has " + std::to_string(r.labels.size()) + " labels, expected " +
                          std::to_string(classes));
  for (auto b : r.labels)
    if (b > 1) throw ValidationError("record '" + r.image_id + "' has a non-binary label");
  return r;
}

/// Writes manifest.json; image_dir is stored relative to `path`'s directory
/// when it lies below it.
inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const auto base = path.parent_path();
  auto rel = m.image_dir.lexically_relative(base.empty() ? "." : base);
  const bool inside = !rel.empty() && *rel.begin() != "..";
  nlohmann::json j;
  j["image_dir"] = (inside ? rel : m.image_dir).generic_string();
  j["image_size"] = m.image_size;
  j["channels"] = m.channels;
  j["class_names"] = m.class_names;
  j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) j["records"].push_back(record_to_json(r));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  std::filesystem::path dir = j.at("image_dir").get<std::string>();
  m.image_dir = dir.is_absolute() ? dir : path.parent_path() / dir;
  m.image_size = j.at("image_size").get<std::size_t>();
  m.channels = j.at("channels").get<std::size_t>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  for (const auto& jr : j.at("records")) m.records.push_back(record_from_json(jr, m.class_names.size()));
  validate_records(m.records);
  return m;
}

/// Decodes every image and checks its channel count.
inline void validate_images(const DatasetManifest& m) {
  for (const auto& r : m.records) {
    const Image img = read_pnm(m.image_path(r));
    if (img.channels != m.channels)
      throw ValidationError(m.image_path(r).string() + ": expected " + std::to_string(m.channels) + " channels, got " +
                            std::to_string(img.channels));
  }
}

// ---------------------------------------------------------------- boxes

/// Box CSV: image_id, class_name, x, y, w, h in original pixel coordinates.
inline void write_gt_boxes(const std::filesystem::path& path, const std::vector<GroundTruthBox>& boxes,
                           const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image_id,class_name,x,y,w,h\n";
  for (const auto& b : boxes) {
    out << csv_field(b.image_id) << ',' << csv_field(class_names.at(b.class_index)) << ',' << b.box.x_min << ','
        << b.box.y_min << ',' << b.box.width() << ',' << b.box.height() << '\n';
  }
}

inline std::vector<GroundTruthBox> read_gt_boxes(const std::filesystem::path& path,
                                                 const std::vector<std::string>& class_names) {
  const CsvTable t = read_csv(path);
  const std::size_t c_id = t.column("image_id"), c_cls = t.column("class_name"), cx = t.column("x"),
                    cy = t.column("y"), cw = t.column("w"), ch = t.column("h");
  std::vector<GroundTruthBox> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = path.string() + ":" + std::to_string(t.line_numbers[i]);
    auto it = std::find(class_names.begin(), class_names.end(), row[c_cls]);
    if (it == class_names.end()) throw ValidationError(where + ": unknown class '" + row[c_cls] + "'");
    GroundTruthBox b;
    b.image_id = row[c_id];
    b.class_index = static_cast<std::size_t>(it - class_names.begin());
    try {
      b.box = Bbox::from_xywh(std::stod(row[cx]), std::stod(row[cy]), std::stod(row[cw]), std::stod(row[ch]));
    } catch (const std::exception&) {
      throw ValidationError(where + ": malformed box coordinates");
    }
    if (!b.box.valid()) throw ValidationError(where + ": empty box");
    out.push_back(std::move(b));
  }
  return out;
}

/// Ground truth mapped into preprocessed coordinates; boxes cropped away are dropped.
inline std::vector<GroundTruthBox> map_gt_boxes(const std::vector<GroundTruthBox>& boxes, std::size_t orig_w,
                                                std::size_t orig_h, std::size_t target) {
  std::vector<GroundTruthBox> out;
  for (const auto& b : boxes) {
    if (auto m = map_box_to_preprocessed(b.box, orig_w, orig_h, target)) out.push_back({b.image_id, b.class_index, *m});
  }
  return out;
}

}  // namespace relconv
