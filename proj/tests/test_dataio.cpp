#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "relconv/dataio.hpp"
#include "relconv/relgraph.hpp"
#include "relconv/synthetic.hpp"
#include "tempdir.hpp"

using namespace relconv;

namespace {

const std::string kHeader = "Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,View Position\n";

std::map<Split, int> split_counts(const std::map<std::string, Split>& s) {
  std::map<Split, int> n;
  for (const auto& [id, sp] : s) n[sp] += 1;
  return n;
}

}  // namespace

TEST(Splits, SevenTwoOneOnTenRecords) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("img" + std::to_string(i));
  auto s = split_by_ratio(ids, {0.7, 0.2, 0.1}, 7);
  auto n = split_counts(s);
  EXPECT_EQ(n[Split::Train], 7);
  EXPECT_EQ(n[Split::Val], 2);
  EXPECT_EQ(n[Split::Test], 1);
}

TEST(Splits, DependOnlyOnSeedAndIdSet) {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("img" + std::to_string(i));
  auto a = split_by_ratio(ids, {0.7, 0.2, 0.1}, 3);
  std::reverse(ids.begin(), ids.end());
  auto b = split_by_ratio(ids, {0.7, 0.2, 0.1}, 3);
  EXPECT_EQ(a, b);
  auto c = split_by_ratio(ids, {0.7, 0.2, 0.1}, 4);
  EXPECT_NE(a, c);
}

TEST(Metadata, ParsesRowsAndNoFinding) {
  TempDir dir;
  spit(dir / "meta.csv", kHeader +
                             "a.png,No Finding,0,1,58,M,PA\n"
                             "b.png,Effusion|Mass,1,1,059Y,M,AP\n"
                             "c.png,Hernia,0,2,33,F,PA\n");
  SplitSpec split;
  split.seed = 1;
  auto recs = load_metadata(dir / "meta.csv", split);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].labels, std::vector<std::uint8_t>(14, 0));
  EXPECT_EQ(recs[1].age, 59);
  EXPECT_EQ(recs[1].view, View::AP);
  EXPECT_EQ(recs[1].labels[2], 1);
  EXPECT_EQ(recs[1].labels[4], 1);
  EXPECT_EQ(std::count(recs[1].labels.begin(), recs[1].labels.end(), 1), 2);
  EXPECT_EQ(recs[2].labels[13], 1);
  EXPECT_EQ(recs[2].gender, Gender::F);
}

TEST(Metadata, InconsistentGenderRejected) {
  TempDir dir;
  spit(dir / "meta.csv", kHeader + "a.png,No Finding,0,7,58,M,PA\nb.png,No Finding,1,7,58,F,PA\n");
  EXPECT_THROW(load_metadata(dir / "meta.csv", SplitSpec{}), ValidationError);
}

TEST(Metadata, UnknownLabelNamesTheRow) {
  TempDir dir;
  spit(dir / "meta.csv", kHeader + "a.png,No Finding,0,7,58,M,PA\nb.png,Flu,1,7,58,M,PA\n");
  try {
    load_metadata(dir / "meta.csv", SplitSpec{});
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("meta.csv:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("Flu"), std::string::npos) << msg;
  }
}

TEST(Metadata, MalformedAgeRejected) {
  TempDir dir;
  spit(dir / "meta.csv", kHeader + "a.png,No Finding,0,7,fifty,M,PA\n");
  EXPECT_THROW(load_metadata(dir / "meta.csv", SplitSpec{}), ValidationError);
}

TEST(Metadata, ExplicitSplitFile) {
  TempDir dir;
  spit(dir / "meta.csv", kHeader + "a.png,No Finding,0,7,58,M,PA\nb.png,No Finding,1,7,58,M,PA\n");
  spit(dir / "split.csv", "image_id,split\na.png,test\nb.png,val\n");
  SplitSpec split;
  split.file = dir / "split.csv";
  auto recs = load_metadata(dir / "meta.csv", split);
  EXPECT_EQ(recs[0].split, Split::Test);
  EXPECT_EQ(recs[1].split, Split::Val);
  spit(dir / "split.csv", "image_id,split\na.png,test\n");
  EXPECT_THROW(load_metadata(dir / "meta.csv", split), ValidationError);
}

TEST(Metadata, CsvRoundTrip) {
  TempDir dir;
  std::vector<ImageRecord> recs{{"x,1.png", "p", 40, Gender::F, View::AP, {1, 0, 1}, Split::Train},
                                {"y.png", "q", 3, Gender::M, View::PA, {0, 0, 0}, Split::Train}};
  const std::vector<std::string> names{"A", "B", "C"};
  write_metadata_csv(dir / "m.csv", recs, names);
  SplitSpec split;
  split.ratio = {1, 0, 0};
  EXPECT_EQ(load_metadata(dir / "m.csv", split, names), recs);
}

TEST(Pnm, GrayAndColorRoundTrip) {
  TempDir dir;
  Image g(5, 3, 1), c(2, 2, 3);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) g.pixels[i] = static_cast<double>(i * 17) / 255.0;
  for (std::size_t i = 0; i < c.pixels.size(); ++i) c.pixels[i] = static_cast<double>(255 - i * 20) / 255.0;
  write_pnm(dir / "g.pgm", g);
  write_pnm(dir / "c.ppm", c);
  auto g2 = read_pnm(dir / "g.pgm");
  auto c2 = read_pnm(dir / "c.ppm");
  EXPECT_EQ(g2.width, 5u);
  EXPECT_EQ(g2.height, 3u);
  EXPECT_EQ(g2.pixels, g.pixels);
  EXPECT_EQ(c2.channels, 3u);
  EXPECT_EQ(c2.pixels, c.pixels);
}

TEST(Pnm, SixteenBitAndComments) {
  TempDir dir;
  std::string data = "P5\n# comment\n2 1\n65535\n";
  data += std::string("\xff\xff\x80\x00", 4);
  spit(dir / "w.pgm", data);
  auto img = read_pnm(dir / "w.pgm");
  EXPECT_DOUBLE_EQ(img.pixels[0], 1.0);
  EXPECT_DOUBLE_EQ(img.pixels[1], 32768.0 / 65535.0);
}

TEST(Pnm, UndecodableFileNamesPath) {
  TempDir dir;
  spit(dir / "bad.pgm", "P5\n4 4\n255\nab");
  try {
    read_pnm(dir / "bad.pgm");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.pgm"), std::string::npos);
  }
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), IoError);
}

TEST(Preprocess, ResizeSides) {
  EXPECT_EQ(resize_side(224), 256u);
  EXPECT_EQ(crop_offset(224), 16u);
  EXPECT_EQ(resize_side(64), 74u);
  EXPECT_EQ(crop_offset(64), 5u);
}

TEST(Preprocess, ConstantGrayGivesChannelConstants) {
  for (std::size_t target : {16u, 64u, 224u}) {
    Image img(target + 7, target + 3, 1, 0.5);
    auto t = preprocess_image<double>(img, target);
    ASSERT_EQ(t.shape(), (Shape{3, target, target}));
    for (std::size_t c = 0; c < 3; ++c) {
      const double want = (0.5 - kImageNetMean[c]) / kImageNetStd[c];
      for (std::size_t y = 0; y < target; ++y)
        for (std::size_t x = 0; x < target; ++x) ASSERT_NEAR(t(c, y, x), want, 1e-12);
    }
  }
}

TEST(Preprocess, LinearRampMatchesSourceCoordinates) {
  // bilinear interpolation reproduces an affine image exactly away from the clamped border
  const std::size_t src = 50, target = 64, side = resize_side(target), off = crop_offset(target);
  Image img(src, src, 1);
  for (std::size_t y = 0; y < src; ++y)
    for (std::size_t x = 0; x < src; ++x) img.at(x, y) = 0.1 + 0.01 * static_cast<double>(x) + 0.004 * static_cast<double>(y);
  auto t = preprocess_image<double>(img, target);
  const double scale = static_cast<double>(src) / static_cast<double>(side);
  for (std::size_t y = 0; y < target; ++y)
    for (std::size_t x = 0; x < target; ++x) {
      const double sx = (static_cast<double>(x + off) + 0.5) * scale - 0.5;
      const double sy = (static_cast<double>(y + off) + 0.5) * scale - 0.5;
      if (sx < 0 || sy < 0 || sx > src - 1 || sy > src - 1) continue;
      const double v = 0.1 + 0.01 * sx + 0.004 * sy;
      EXPECT_NEAR(t(1, y, x), (v - kImageNetMean[1]) / kImageNetStd[1], 1e-12);
    }
}

TEST(Preprocess, ColorChannelsStayApart) {
  Image img(8, 8, 3);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      img.at(x, y, 0) = 0.2;
      img.at(x, y, 1) = 0.6;
      img.at(x, y, 2) = 0.9;
    }
  auto t = preprocess_image<double>(img, 8);
  EXPECT_NEAR(t(0, 3, 3), (0.2 - 0.485) / 0.229, 1e-12);
  EXPECT_NEAR(t(1, 3, 3), (0.6 - 0.456) / 0.224, 1e-12);
  EXPECT_NEAR(t(2, 3, 3), (0.9 - 0.406) / 0.225, 1e-12);
}

TEST(Preprocess, BoxMapping) {
  auto b = map_box_to_preprocessed(Bbox{20, 30, 100, 130}, 224, 224, 224);
  ASSERT_TRUE(b);
  const double s = 256.0 / 224.0;
  EXPECT_DOUBLE_EQ(b->x_min, 20 * s - 16);
  EXPECT_DOUBLE_EQ(b->y_max, 130 * s - 16);
  auto clipped = map_box_to_preprocessed(Bbox{0, 0, 4, 4}, 224, 224, 224);
  EXPECT_FALSE(clipped);
  auto edge = map_box_to_preprocessed(Bbox{200, 200, 224, 224}, 224, 224, 224);
  ASSERT_TRUE(edge);
  EXPECT_DOUBLE_EQ(edge->x_max, 224);
}

TEST(Manifest, RoundTripWithBoxes) {
  TempDir dir;
  DatasetManifest m;
  m.image_dir = dir / "images";
  m.image_size = 32;
  m.channels = 1;
  m.class_names = {"A", "B"};
  m.records = {{"a.pgm", "1", 30, Gender::M, View::PA, {1, 0}, Split::Train},
               {"b.pgm", "2", 31, Gender::F, View::AP, {0, 0}, Split::Test}};
  save_manifest(dir / "manifest.json", m);
  auto back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back.records, m.records);
  EXPECT_EQ(back.image_dir, dir / "images");
  EXPECT_EQ(back.class_names, m.class_names);

  std::vector<GroundTruthBox> boxes{{"a.pgm", 1, Bbox::from_xywh(1, 2, 3, 4)}};
  write_gt_boxes(dir / "gt.csv", boxes, m.class_names);
  auto bb = read_gt_boxes(dir / "gt.csv", m.class_names);
  ASSERT_EQ(bb.size(), 1u);
  EXPECT_EQ(bb[0].class_index, 1u);
  EXPECT_EQ(bb[0].box, boxes[0].box);
}

TEST(Manifest, MissingImageDetected) {
  TempDir dir;
  DatasetManifest m;
  m.image_dir = dir.path();
  m.class_names = {"A"};
  m.records = {{"gone.pgm", "1", 30, Gender::M, View::PA, {0}, Split::Train}};
  EXPECT_THROW(validate_images(m), IoError);
}

TEST(Synthetic, DefaultContract) {
  SyntheticConfig cfg;
  auto ds = generate_synthetic(cfg, 1);
  const auto& recs = ds.manifest.records;
  EXPECT_GE(recs.size(), 600u);
  EXPECT_LE(recs.size(), 1200u);
  EXPECT_EQ(ds.images.size(), recs.size());

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < recs.size(); ++i) index[recs[i].image_id] = i;
  for (const auto& b : ds.boxes) {
    const auto& r = recs[index.at(b.image_id)];
    EXPECT_EQ(r.labels[b.class_index], 1);
    const Image& img = ds.images[index.at(b.image_id)];
    double in = 0, out = 0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const bool inside = x >= b.box.x_min && x < b.box.x_max && y >= b.box.y_min && y < b.box.y_max;
        bool any_box = false;
        for (const auto& o : ds.boxes)
          if (o.image_id == b.image_id && x >= o.box.x_min && x < o.box.x_max && y >= o.box.y_min && y < o.box.y_max)
            any_box = true;
        if (inside) in += img.at(x, y), ++nin;
        else if (!any_box) out += img.at(x, y), ++nout;
      }
    EXPECT_NEAR(in / nin - out / nout, cfg.intensity, 0.05);
  }

  std::set<Split> splits;
  for (const auto& r : recs) splits.insert(r.split);
  EXPECT_EQ(splits.size(), 3u);

  auto g = build_relation_graph(recs, default_relations());
  for (const auto& rel : g.relations()) EXPECT_GT(rel.cluster_count(), 1u) << rel.spec.name;
}

TEST(Synthetic, PersonPartitionRefinesGender) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto ds = generate_synthetic(SyntheticConfig{}, seed);
    auto g = build_relation_graph(ds.manifest.records, default_relations());
    const auto& person = g.relation(0).partition;
    const auto& gender = g.relation(2).partition;
    std::map<std::size_t, std::size_t> gender_of_cluster;
    for (std::size_t i = 0; i < person.size(); ++i) {
      auto [it, fresh] = gender_of_cluster.emplace(person[i], gender[i]);
      EXPECT_EQ(it->second, gender[i]);
    }
  }
}

TEST(Synthetic, ZeroExpressionMeansNoFindings) {
  SyntheticConfig cfg;
  cfg.patients = 30;
  cfg.expression = 0.0;
  auto ds = generate_synthetic(cfg, 5);
  EXPECT_TRUE(ds.boxes.empty());
  for (const auto& r : ds.manifest.records) EXPECT_EQ(std::count(r.labels.begin(), r.labels.end(), 1), 0);
}

TEST(Synthetic, ByteIdenticalReruns) {
  TempDir dir;
  SyntheticConfig cfg;
  cfg.patients = 20;
  write_synthetic(dir / "a", generate_synthetic(cfg, 9));
  write_synthetic(dir / "b", generate_synthetic(cfg, 9));
  for (const char* f : {"manifest.json", "metadata.csv", "gt_boxes.csv", "splits.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  std::size_t images = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "a" / "images")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / "images" / e.path().filename()));
    ++images;
  }
  auto m = load_manifest(dir / "a" / "manifest.json");
  EXPECT_EQ(images, m.records.size());
  validate_images(m);
}

TEST(Synthetic, WrittenMetadataReloadsWithSameSplit) {
  TempDir dir;
  SyntheticConfig cfg;
  cfg.patients = 15;
  auto ds = generate_synthetic(cfg, 11);
  write_synthetic(dir.path(), ds);
  SplitSpec split;
  split.seed = 11;
  auto recs = load_metadata(dir / "metadata.csv", split, ds.manifest.class_names);
  EXPECT_EQ(recs, ds.manifest.records);
}

TEST(Synthetic, TooSmallImageRejected) {
  SyntheticConfig cfg;
  cfg.image_size = 12;
  EXPECT_THROW(generate_synthetic(cfg, 1), ConfigError);
}
