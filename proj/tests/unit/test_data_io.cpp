#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "occludox/checkpoint.hpp"
#include "occludox/dataset.hpp"
#include "occludox/error.hpp"
#include "occludox/mask.hpp"
#include "occludox/pnm.hpp"
#include "occludox/report.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"
#include "toys.hpp"

using namespace occludox;
using namespace std::string_literals;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

void write_ppm(const std::filesystem::path& p, std::size_t h, std::size_t w, std::uint8_t fill) {
  write_pnm(p, PnmImage{w, h, 3, std::vector<std::uint8_t>(h * w * 3, fill)});
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

EvaluationReport sample_report() {
  EvaluationReport r;
  r.rows = {{"clean", "eyeglass", "iterations", 0, 1.0, 0.1},
            {"clean", "eyeglass", "iterations", 10, 0.4375, 0.2},
            {"doa-exh", "eyeglass", "iterations", 10, 0.8125, 0.3}};
  r.seed = 42;
  r.config_hash = "abc";
  r.version = "0.1.0";
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic data

TEST_CASE("synthetic signs: sizes, balance, range, determinism") {
  const DatasetSplits a = gen_synthetic_signs(42, 16, 100, 32);
  CHECK(a.train.size() == 1120);
  CHECK(a.val.size() == 320);
  CHECK(a.test.size() == 160);
  CHECK(a.train.image_dims() == Shape{3, 32, 32});
  CHECK(a.train.split == Split::kTrain);
  CHECK(a.test.split == Split::kTest);
  for (const Dataset* d : {&a.train, &a.val, &a.test}) {
    CHECK_NOTHROW(d->validate());
    std::vector<std::size_t> counts(16, 0);
    for (std::size_t l : d->labels) ++counts[l];
    for (std::size_t c : counts) CHECK(c == d->size() / 16);
  }
  const DatasetSplits b = gen_synthetic_signs(42, 16, 100, 32);
  CHECK(a.train.images == b.train.images);
  CHECK(a.test.labels == b.test.labels);
  CHECK_FALSE(gen_synthetic_signs(43, 16, 100, 32).train.images == a.train.images);
}

TEST_CASE("synthetic signs: classes are distinct and parameters are checked") {
  const DatasetSplits d = gen_synthetic_signs(7, 32, 1, 16);
  std::set<std::vector<Real>> distinct;
  const Dataset all = d.train;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Tensor img = all.image(i);
    distinct.emplace(img.values().begin(), img.values().end());
  }
  CHECK(distinct.size() == all.size());
  CHECK(split_sizes(1600).train == 1120);
  CHECK(split_sizes(10).val == 2);
  CHECK(split_sizes(10).test == 1);
  CHECK_THROWS_AS(gen_synthetic_signs(1, 1, 10, 32), ConfigError);
  CHECK_THROWS_AS(gen_synthetic_signs(1, 33, 10, 32), ConfigError);
  CHECK_THROWS_AS(gen_synthetic_signs(1, 4, 10, 24), ConfigError);
  CHECK_THROWS_AS(gen_synthetic_signs(1, 4, 0, 32), ConfigError);
  CHECK(gen_synthetic_signs(1, 2, 10, 64).train.image_dims() == Shape{3, 64, 64});
}

TEST_CASE("dataset helpers") {
  SplitMix64 rng(80);
  const Dataset d = toys::make_dataset(oracle::random_tensor({4, 1, 2, 2}, rng, 0.0, 1.0), {0, 1, 2, 1}, 3);
  const std::vector<std::size_t> pick{3, 0};
  const Dataset s = d.subset(pick);
  CHECK(s.labels == std::vector<std::size_t>{1, 0});
  CHECK(s.image(0) == d.image(3));
  const Dataset w = d.without_class(1);
  CHECK(w.labels == std::vector<std::size_t>{0, 2});
  Dataset bad = d;
  bad.labels[0] = 3;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = d;
  bad.images[0] = 1.5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = d;
  bad.labels.pop_back();
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

// ---------------------------------------------------------------------------
// PNM and image folders

TEST_CASE("pnm parse and encode") {
  const PnmImage img = parse_pnm(bytes_of("P6\n# comment\n2 1\n255\n\x01\x02\x03\xff\x00\x80"s));
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.channels == 3);
  CHECK(img.pixels == std::vector<std::uint8_t>{1, 2, 3, 255, 0, 128});
  CHECK(parse_pnm(encode_pnm(img)).pixels == img.pixels);
  const Tensor t = to_tensor(img);
  CHECK(t.dims() == Shape{3, 1, 2});
  CHECK(t[0] == 1.0 / 255.0);
  CHECK(t[1] == 1.0);  // channel 0, second pixel
  CHECK(from_tensor(t).pixels == img.pixels);

  CHECK_THROWS_AS(parse_pnm(bytes_of("P3\n1 1\n255\n\x01"s)), FormatError);
  CHECK_THROWS_AS(parse_pnm(bytes_of("P5\n1 1\n65535\n\x01\x01"s)), FormatError);
  CHECK_THROWS_AS(parse_pnm(bytes_of("P5\n2 2\n255\n\x01"s)), FormatError);
  CHECK_THROWS_AS(parse_pnm(bytes_of("P5\n2 x\n255\n"s)), FormatError);
  try {
    parse_pnm(bytes_of("Q5\n1 1\n255\n\x01"s));
    FAIL("no error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
}

TEST_CASE("pnm tensor round trip is exact on the 1/255 grid") {
  SplitMix64 rng(81);
  for (int trial = 0; trial < 20; ++trial) {
    PnmImage img{1 + rng.below(5), 1 + rng.below(5), trial % 2 ? 3u : 1u, {}};
    for (std::size_t i = 0; i < img.width * img.height * img.channels; ++i)
      img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    CHECK(from_tensor(to_tensor(img)).pixels == img.pixels);
    CHECK(parse_pnm(encode_pnm(img)).pixels == img.pixels);
  }
}

TEST_CASE("image folder loading") {
  TempDir dir("imgdir");
  write_ppm(dir / "a.ppm", 2, 3, 255);
  write_ppm(dir / "b.ppm", 2, 3, 0);
  write_ppm(dir / "c.ppm", 2, 3, 51);
  write_text(dir / "labels.csv", "c.ppm,2\na.ppm,0\nb.ppm,1\n");
  const Dataset d = load_image_dir(dir.path(), dir / "labels.csv");
  REQUIRE(d.size() == 3);
  CHECK(d.labels == std::vector<std::size_t>{2, 0, 1});
  CHECK(d.image_dims() == Shape{3, 2, 3});
  const Tensor white = d.image(1), grey = d.image(0);
  for (Real v : white.values()) CHECK(v == 1.0);
  for (Real v : grey.values()) CHECK(v == 0.2);
  CHECK(d.class_count() == 3);

  write_text(dir / "missing.csv", "a.ppm,0\nghost.ppm,1\n");
  try {
    load_image_dir(dir.path(), dir / "missing.csv");
    FAIL("no error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("ghost.ppm") != std::string::npos);
  }
  write_ppm(dir / "big.ppm", 4, 4, 9);
  write_text(dir / "mixed.csv", "a.ppm,0\nbig.ppm,1\n");
  CHECK_THROWS_AS(load_image_dir(dir.path(), dir / "mixed.csv"), IoError);
  write_text(dir / "broken.ppm", "P6\n2 2\n255\n\x01");
  write_text(dir / "broken.csv", "broken.ppm,0\n");
  try {
    load_image_dir(dir.path(), dir / "broken.csv");
    FAIL("no error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("broken.ppm") != std::string::npos);
  }
  write_text(dir / "badlabel.csv", "a.ppm,x\n");
  CHECK_THROWS_AS(load_image_dir(dir.path(), dir / "badlabel.csv"), IoError);
  CHECK_THROWS_AS(load_image_dir(dir.path(), dir / "nope.csv"), IoError);
}

TEST_CASE("image folder save and reload") {
  TempDir dir("imgsave");
  const DatasetSplits s = gen_synthetic_signs(3, 4, 5, 16);
  save_image_dir(s.train, dir.path());
  const Dataset back = load_image_dir(dir.path(), dir / "labels.csv", 4);
  CHECK(back.labels == s.train.labels);
  // The 8-bit files hold pixels to within half a grey level.
  CHECK(max_abs_diff(back.images, s.train.images) <= 0.5 / 255.0 + 1e-12);
  save_image_dir(back, dir / "again");
  CHECK(load_image_dir(dir / "again", dir / "again" / "labels.csv", 4).images == back.images);
}

// ---------------------------------------------------------------------------
// Masks

TEST_CASE("mask basics") {
  Mask m(3, 4);
  CHECK(m.empty());
  m.add_rectangle(1, 1, 2, 2);
  CHECK(m.count() == 4);
  m.add_rectangle(0, 0, 2, 2);
  CHECK(m.count() == 7);
  m.set(0, 0, false);
  CHECK(m.count() == 6);
  CHECK_THROWS_AS(m.add_rectangle(2, 3, 2, 1), BoundsError);
  CHECK_THROWS_AS(Mask::rectangle(3, 4, 0, 0, 4, 1), BoundsError);
  CHECK(Mask::full(3, 4).count() == 12);
  CHECK_THROWS_AS(m.check_fits(Tensor({3, 4, 3})), ShapeError);
  CHECK_NOTHROW(m.check_fits(Tensor({1, 3, 4})));
}

TEST_CASE("mask pgm files") {
  TempDir dir("mask");
  write_pnm(dir / "zero.pgm", PnmImage{4, 2, 1, std::vector<std::uint8_t>(8, 0)});
  write_pnm(dir / "full.pgm", PnmImage{4, 2, 1, std::vector<std::uint8_t>(8, 255)});
  std::vector<std::uint8_t> checker;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) checker.push_back((r + c) % 2 ? 128 : 127);
  write_pnm(dir / "checker.pgm", PnmImage{4, 2, 1, checker});

  CHECK(load_mask_pgm(dir / "zero.pgm", 2, 4).empty());
  CHECK(load_mask_pgm(dir / "full.pgm", 2, 4).count() == 8);
  const Mask ch = load_mask_pgm(dir / "checker.pgm", 2, 4);
  CHECK(ch.count() == 4);
  CHECK(ch.at(0, 1));
  CHECK_FALSE(ch.at(0, 0));
  CHECK_THROWS_AS(load_mask_pgm(dir / "full.pgm", 4, 2), ShapeError);
  write_text(dir / "bad.pgm", "P5\n4 2\n255");
  CHECK_THROWS_AS(load_mask_pgm(dir / "bad.pgm", 2, 4), FormatError);
  write_pnm(dir / "colour.ppm", PnmImage{4, 2, 3, std::vector<std::uint8_t>(24, 255)});
  CHECK_THROWS_AS(load_mask_pgm(dir / "colour.ppm", 2, 4), FormatError);

  save_mask_pgm(ch, dir / "saved.pgm");
  const Mask again = load_mask_pgm(dir / "saved.pgm", 2, 4);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(again.at(r, c) == ch.at(r, c));
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST_CASE("checkpoint round trip is bit-exact and byte-stable") {
  TempDir dir("ckpt");
  const ConvNetSpec spec = toys::tiny_spec();
  const ModelParams p = build_cnn(spec, 90);
  save_checkpoint(p, dir / "a.ckpt");
  const ModelParams back = load_checkpoint(dir / "a.ckpt", spec);
  CHECK(back == p);
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(read_file_bytes(dir / "a.ckpt") == read_file_bytes(dir / "b.ckpt"));

  const auto bytes = read_file_bytes(dir / "a.ckpt");
  CHECK(std::memcmp(bytes.data(), "DOAC", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == p.tensors.size());

  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", ConvNetSpec::desk_default(16)), ShapeError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt", spec), IoError);
}

TEST_CASE("checkpoint f32 payloads and header layout") {
  const std::vector<NamedTensor> t{{"w", Tensor({2}, {0.5, -1.25})}};
  const auto b = encode_checkpoint(t, CheckpointDtype::kF32);
  // magic 4 + version 4 + count 4 + name len 4 + "w" + rank 4 + dim 4 + dtype 1 + 2 * 4 payload.
  CHECK(b.size() == 4 + 4 + 4 + 4 + 1 + 4 + 4 + 1 + 8);
  CHECK(b[25] == 0);
  const auto back = decode_checkpoint(b);
  REQUIRE(back.size() == 1);
  CHECK(back[0].name == "w");
  CHECK(back[0].value == t[0].value);
}

TEST_CASE("checkpoint format errors carry byte offsets") {
  const ModelParams p = build_cnn(toys::tiny_spec(), 91);
  const auto good = encode_checkpoint(p.tensors);
  const auto offset_of = [](std::vector<std::uint8_t> b) -> std::int64_t {
    try {
      decode_checkpoint(b);
    } catch (const FormatError& e) {
      return static_cast<std::int64_t>(e.offset());
    }
    return -1;
  };
  auto bad = good;
  std::memcpy(bad.data(), "XXXX", 4);
  CHECK(offset_of(bad) == 0);
  bad = good;
  put_u32(bad, 4, 9);
  CHECK(offset_of(bad) == 4);
  bad = good;
  bad.resize(good.size() - 3);
  CHECK(offset_of(bad) > 0);
  bad = good;
  bad.push_back(0);
  CHECK(offset_of(bad) == static_cast<std::int64_t>(good.size()));
  CHECK(offset_of(std::vector<std::uint8_t>{}) == 0);
  for (std::size_t cut = 0; cut < good.size(); cut += 97) CHECK(offset_of({good.begin(), good.begin() + cut}) >= 0);
}

// ---------------------------------------------------------------------------
// Reports

TEST_CASE("report csv format") {
  EvaluationReport one;
  one.rows = {{"clean", "roa", "iterations", 10, 1.0, 0.0}};
  const std::string text = report_csv(one);
  CHECK(text == "defense,attack,param,value,accuracy\nclean,roa,iterations,10,1.0000\n");
  CHECK(format_value(0.05) == "0.05");
  CHECK(format_value(1000) == "1000");
  EvaluationReport empty;
  CHECK_THROWS_AS(report_csv(empty), ContractError);
  EvaluationReport bad = one;
  bad.rows[0].accuracy = 1.5;
  CHECK_THROWS_AS(report_csv(bad), ContractError);
}

TEST_CASE("report files: byte-stable rewrite, parse round trip, meta and svg") {
  TempDir dir("report");
  const EvaluationReport r = sample_report();
  write_report_csv(r, dir / "a.csv");
  write_report_csv(r, dir / "b.csv");
  const auto a = read_file_bytes(dir / "a.csv");
  CHECK(a == read_file_bytes(dir / "b.csv"));
  const auto rows = parse_report_csv(std::string(a.begin(), a.end()));
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].defense == "clean");
  CHECK(rows[1].value == 10);
  CHECK(rows[1].accuracy == 0.4375);
  CHECK(rows[2].defense == "doa-exh");

  write_report_meta(r, dir / "a.meta.json");
  const auto meta = read_file_bytes(dir / "a.meta.json");
  const std::string m(meta.begin(), meta.end());
  CHECK(m.find("\"config_hash\"") != std::string::npos);
  CHECK(m.find("\"seed\": 42") != std::string::npos);

  const std::string svg = render_svg(rows);
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t lines = 0;
  for (std::size_t at = svg.find("<polyline"); at != std::string::npos; at = svg.find("<polyline", at + 1)) ++lines;
  CHECK(lines == 2);
  CHECK(svg == render_svg(rows));
  CHECK_THROWS_AS(render_svg({}), ContractError);
}

TEST_CASE("report parse errors name the line") {
  const auto line_of = [](const std::string& text) -> std::string {
    try {
      parse_report_csv(text);
    } catch (const FormatError& e) {
      return e.message();
    }
    return "";
  };
  CHECK(line_of("wrong,header\n").find("line 1") != std::string::npos);
  CHECK(line_of("defense,attack,param,value,accuracy\nclean,roa,iterations,10\n").find("line 2") != std::string::npos);
  CHECK(line_of("defense,attack,param,value,accuracy\nclean,roa,iterations,x,0.5\n").find("line 2") !=
        std::string::npos);
  CHECK(parse_report_csv("defense,attack,param,value,accuracy\n").empty());
}
