#include <filesystem>
#include <limits>
#include <fstream>

#include "doctest.h"
#include "vqab/checkpoint.hpp"
#include "vqab/image.hpp"
#include "vqab/trainer.hpp"

using namespace vqab;
namespace fs = std::filesystem;

namespace {

ExperimentSpec tiny_spec(const std::string& name) {
  ExperimentSpec spec;
  spec.name = name;
  spec.codebook_size = 8;
  spec.latent_dim = 2;
  spec.image_count = 6;
  spec.epochs = 2;
  spec.seed = 7;
  spec.batch_size = 5;
  spec.model.image_size = 8;
  spec.model.base_channels = 4;
  spec.model.channel_multipliers = {1, 2};
  spec.model.num_downsamples = 1;
  spec.finalize();
  return spec;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("vqab_test_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("ppm round trip is bit-exact") {
  TempDir dir("ppm");
  Rng rng(1);
  ImageU8 img;
  img.width = 7;
  img.height = 5;
  img.pixels.resize(7 * 5 * 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  write_ppm((dir.path / "a.ppm").string(), img);
  ImageU8 back = read_ppm((dir.path / "a.ppm").string());
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);
  write_ppm((dir.path / "b.ppm").string(), back);
  CHECK(read_file(dir.path / "a.ppm") == read_file(dir.path / "b.ppm"));
}

TEST_CASE("image helpers") {
  SUBCASE("center crop takes the middle square") {
    ImageU8 img;
    img.width = 4;
    img.height = 2;
    img.pixels.resize(4 * 2 * 3);
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 2; ++y)
        for (int c = 0; c < 3; ++c) img.pixels[(static_cast<size_t>(y) * 4 + x) * 3 + c] = static_cast<uint8_t>(x);
    ImageU8 cropped = center_crop_square(img);
    CHECK(cropped.width == 2);
    CHECK(cropped.height == 2);
    CHECK(cropped.pixels[0] == 1);  // columns 1 and 2 survive
    CHECK(cropped.pixels[3] == 2);
  }

  SUBCASE("resizing a constant image stays constant") {
    ImageU8 img;
    img.width = img.height = 6;
    img.pixels.assign(6 * 6 * 3, 123);
    ImageU8 small = resize_bilinear(img, 4);
    for (auto p : small.pixels) CHECK(p == 123);
    ImageU8 big = resize_bilinear(img, 9);
    for (auto p : big.pixels) CHECK(p == 123);
  }

  SUBCASE("tensor mapping is [-1,1] and inverts") {
    ImageU8 img;
    img.width = img.height = 2;
    img.pixels = {0,   0,   0,   255, 255, 255, 128, 64, 32, 10, 20, 30};
    Tensor t = image_to_tensor(img);
    CHECK(t.value()[0] == doctest::Approx(-1.0));
    CHECK(t.value()[1] == doctest::Approx(1.0));
    ImageU8 back = tensor_to_image(t);
    CHECK(back.pixels == img.pixels);
  }
}

TEST_CASE("load_dataset selection and split") {
  TempDir dir("dataset");
  Rng rng(3);
  for (int i = 0; i < 70; ++i) {
    ImageU8 img;
    img.width = 10;
    img.height = 12;
    img.pixels.resize(10 * 12 * 3);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.ppm", i);
    write_ppm((dir.path / name).string(), img);
  }

  SUBCASE("65 images at 0.9 split into 58 train and 7 val") {
    Dataset d = load_dataset(dir.path.string(), 65, 8, 0.9, 42);
    CHECK(d.train.size() == 58);
    CHECK(d.val.size() == 7);
    CHECK(d.train[0].shape() == Shape{3, 8, 8});
  }

  SUBCASE("same seed gives an identical selection and split") {
    Dataset a = load_dataset(dir.path.string(), 20, 8, 0.9, 42);
    Dataset b = load_dataset(dir.path.string(), 20, 8, 0.9, 42);
    CHECK(a.train_names == b.train_names);
    CHECK(a.val_names == b.val_names);
    for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].value() == b.train[i].value());
  }

  SUBCASE("different seeds give a different selection") {
    Dataset a = load_dataset(dir.path.string(), 20, 8, 0.9, 1);
    Dataset b = load_dataset(dir.path.string(), 20, 8, 0.9, 2);
    CHECK(a.train_names != b.train_names);
  }

  SUBCASE("too few images is an error") {
    CHECK_THROWS(load_dataset(dir.path.string(), 200, 8, 0.9, 1));
  }

  SUBCASE("undecodable files are skipped with a warning") {
    std::ofstream bad(dir.path / "aaa_bad.ppm", std::ios::binary);
    bad << "not an image";
    bad.close();
    CHECK_NOTHROW(load_dataset(dir.path.string(), 70, 8, 0.9, 4));
  }
}

TEST_CASE("config parsing") {
  SUBCASE("single experiment with overrides") {
    auto specs = parse_config(
        "[experiment]\n"
        "name = demo\n"
        "codebook_size = 16\n"
        "latent_dim = 4\n"
        "epochs = 3\n"
        "use_positional_encoding = true\n"
        "[model]\n"
        "image_size = 16\n"
        "base_channels = 4\n"
        "channel_multipliers = 1, 2\n"
        "num_downsamples = 1\n"
        "[loss]\n"
        "beta = 0.5\n"
        "[optimizer]\n"
        "learning_rate = 0.002\n");
    REQUIRE(specs.size() == 1);
    CHECK(specs[0].name == "demo");
    CHECK(specs[0].model.codebook_size == 16);
    CHECK(specs[0].model.latent_dim == 4);
    CHECK(specs[0].model.use_positional_encoding);
    CHECK(specs[0].model.channel_multipliers == std::vector<int>{1, 2});
    CHECK(specs[0].weights.beta == 0.5);
    CHECK(specs[0].optimizer.learning_rate == 0.002);
  }

  SUBCASE("repeated [experiment] builds a grid") {
    auto specs = parse_config(
        "[experiment]\nname = a\ncodebook_size = 8\nlatent_dim = 2\n"
        "[model]\nimage_size = 8\nbase_channels = 4\nchannel_multipliers = 1,2\nnum_downsamples = 1\n"
        "[experiment]\nname = b\ncodebook_size = 16\nlatent_dim = 2\n"
        "[model]\nimage_size = 8\nbase_channels = 4\nchannel_multipliers = 1,2\nnum_downsamples = 1\n");
    REQUIRE(specs.size() == 2);
    CHECK(specs[0].codebook_size == 8);
    CHECK(specs[1].codebook_size == 16);
  }

  SUBCASE("unknown key is an error") {
    CHECK_THROWS_AS(parse_config("[experiment]\nname = x\nbogus = 1\n"), std::invalid_argument);
  }

  SUBCASE("unknown section is an error") {
    CHECK_THROWS_AS(parse_config("[experiment]\nname = x\n[nope]\nk = 1\n"), std::invalid_argument);
  }

  SUBCASE("duplicate names are an error") {
    CHECK_THROWS_AS(parse_config("[experiment]\nname = x\n[experiment]\nname = x\n"), std::invalid_argument);
  }

  SUBCASE("canonical form parses back to itself") {
    ExperimentSpec spec = tiny_spec("canon");
    auto specs = parse_config(canonical_config(spec));
    REQUIRE(specs.size() == 1);
    CHECK(canonical_config(specs[0]) == canonical_config(spec));
  }
}

TEST_CASE("metrics rows") {
  SUBCASE("header matches the contract") {
    CHECK(std::string(kMetricsHeader) ==
          "experiment,epoch,split,rec_l1,perceptual,commitment,codebook,vq,vq_core,gan_generator,lambda,total,"
          "codebook_usage_fraction");
  }

  SUBCASE("csv round trip is lossless") {
    MetricsRow r;
    r.experiment = "exp";
    r.epoch = 12;
    r.split = "val";
    r.rec_l1 = 0.123456789012345678;
    r.perceptual = 1e-17;
    r.commitment = 3.7;
    r.codebook = 0.25;
    r.vq = 4.0;
    r.vq_core = 1.175;
    r.gan_generator = -0.5;
    r.lambda = 2.0;
    r.total = 5.5;
    r.codebook_usage_fraction = 0.875;
    MetricsRow back = MetricsRow::parse_csv(r.csv());
    CHECK(back.csv() == r.csv());
    CHECK(back.epoch == 12);
    CHECK(back.rec_l1 == r.rec_l1);
  }
}

TEST_CASE("training runs") {
  SUBCASE("epochs=0 yields an initial checkpoint and a header-only csv") {
    ExperimentSpec spec = tiny_spec("zero");
    spec.epochs = 0;
    spec.finalize();
    Dataset data = dataset_for_spec(spec);
    TrainResult res = train(spec, data);
    CHECK(res.rows.empty());
    CHECK(res.metrics_csv == std::string(kMetricsHeader) + "\n");
    CHECK(res.checkpoint.epoch == 0);
    CHECK(!res.checkpoint.parameters.empty());
  }

  SUBCASE("identical spec and seed give byte-identical metrics") {
    ExperimentSpec spec = tiny_spec("det");
    Dataset data = dataset_for_spec(spec);
    TrainResult a = train(spec, data);
    TrainResult b = train(spec, data);
    CHECK(a.metrics_csv == b.metrics_csv);
    REQUIRE(a.rows.size() == 4);  // 2 epochs x train/val
    CHECK(a.rows[0].split == "train");
    CHECK(a.rows[1].split == "val");
    for (const MetricsRow& r : a.rows) {
      CHECK(r.codebook_usage_fraction > 0);
      CHECK(r.codebook_usage_fraction <= 1);
    }
  }

  SUBCASE("checkpoint save/load/save is byte-identical and restores the model") {
    TempDir dir("ckpt");
    ExperimentSpec spec = tiny_spec("ckpt");
    Dataset data = dataset_for_spec(spec);
    TrainResult res = train(spec, data);

    fs::path p1 = dir.path / "a.vqab", p2 = dir.path / "b.vqab";
    save_checkpoint(p1.string(), res.checkpoint);
    Checkpoint loaded = load_checkpoint(p1.string());
    save_checkpoint(p2.string(), loaded);
    CHECK(read_file(p1) == read_file(p2));
    CHECK(loaded.epoch == res.checkpoint.epoch);
    CHECK(canonical_config(loaded.spec) == canonical_config(spec));

    // Reconstructions from the restored model equal the live model's.
    VQModel live(spec.model, static_cast<uint64_t>(spec.seed));
    restore_parameters(res.checkpoint, live.params());
    VQModel restored(spec.model, static_cast<uint64_t>(spec.seed) + 1);
    restore_parameters(loaded, restored.params());
    Tensor batch = Tensor::from({1, 3, 8, 8}, data.train[0].value());
    Tensor a = live.reconstruct(batch, {}).x_hat;
    Tensor b = restored.reconstruct(batch, {}).x_hat;
    CHECK(a.value() == b.value());
  }

  SUBCASE("non-finite losses abort with the step recorded") {
    ExperimentSpec spec = tiny_spec("blowup");
    Dataset data = dataset_for_spec(spec);
    data.train[2].mutable_value()[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train(spec, data), doctest::Contains("step"), std::runtime_error);
  }
}

TEST_CASE("grid runs") {
  SUBCASE("grid of one equals a lone run") {
    TempDir dir("grid1");
    ExperimentSpec spec = tiny_spec("solo");
    auto summary = run_grid({spec}, dir.path.string());
    REQUIRE(summary.size() == 1);
    TrainResult direct = train(spec, dataset_for_spec(spec));
    CHECK(summary[0].final_val_vq == direct.rows.back().vq);
    CHECK(read_file(dir.path / "solo" / "metrics.csv") == direct.metrics_csv);
  }

  SUBCASE("codebook-size sweep keeps everything else fixed") {
    std::vector<ExperimentSpec> specs;
    for (int k : {4, 8, 16}) {
      ExperimentSpec s = tiny_spec("k" + std::to_string(k));
      s.codebook_size = k;
      s.epochs = 1;
      s.finalize();
      specs.push_back(s);
    }
    for (const ExperimentSpec& s : specs) {
      CHECK(s.latent_dim == specs[0].latent_dim);
      CHECK(s.model.base_channels == specs[0].model.base_channels);
    }
    TempDir dir("grid3");
    auto summary = run_grid(specs, dir.path.string(), 3);
    REQUIRE(summary.size() == 3);

    // Worker-parallel and serial execution agree row for row.
    for (size_t i = 0; i < specs.size(); ++i) {
      TrainResult direct = train(specs[i], dataset_for_spec(specs[i]));
      CHECK(read_file(dir.path / specs[i].name / "metrics.csv") == direct.metrics_csv);
    }
  }

  SUBCASE("duplicate names are rejected") {
    ExperimentSpec s = tiny_spec("dup");
    CHECK_THROWS_AS(run_grid({s, s}, ""), std::invalid_argument);
  }
}

TEST_CASE("reconstruct command round trip") {
  TempDir dir("recon");
  ExperimentSpec spec = tiny_spec("recon");
  spec.epochs = 1;
  spec.finalize();
  Dataset data = dataset_for_spec(spec);
  TrainResult res = train(spec, data, (dir.path / "run").string());

  fs::create_directories(dir.path / "inputs");
  for (int i = 0; i < 5; ++i)
    write_ppm((dir.path / "inputs" / ("in_" + std::to_string(i) + ".ppm")).string(),
              tensor_to_image(data.train[static_cast<size_t>(i)]));

  fs::path ckpt = dir.path / "run" / "checkpoint.vqab";
  reconstruct_cmd(ckpt.string(), (dir.path / "inputs").string(), (dir.path / "out1").string());
  reconstruct_cmd(ckpt.string(), (dir.path / "inputs").string(), (dir.path / "out2").string());
  // 5 images -> one grid of 4 and one of 1, byte-identical across runs.
  CHECK(fs::exists(dir.path / "out1" / "grid_000.ppm"));
  CHECK(fs::exists(dir.path / "out1" / "grid_001.ppm"));
  CHECK(read_file(dir.path / "out1" / "grid_000.ppm") == read_file(dir.path / "out2" / "grid_000.ppm"));
  CHECK(read_file(dir.path / "out1" / "grid_001.ppm") == read_file(dir.path / "out2" / "grid_001.ppm"));

  SUBCASE("empty input directory warns and writes nothing") {
    fs::create_directories(dir.path / "empty");
    reconstruct_cmd(ckpt.string(), (dir.path / "empty").string(), (dir.path / "out3").string());
    CHECK(!fs::exists(dir.path / "out3"));
  }
}
