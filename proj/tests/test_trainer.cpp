#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "objvid/dataset.hpp"
#include "objvid/errors.hpp"
#include "objvid/trainer.hpp"

using namespace objvid;

namespace {

std::string tiny_data_dir() {
  static std::string dir;
  if (dir.empty()) {
    dir = (std::filesystem::temp_directory_path() / "objvid_trainer_data").string();
    std::filesystem::remove_all(dir);
    make_split(dir, 18, 6, 4, 5150, 48);
  }
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.frames = 4;
  c.n_slots = 2;
  c.d = 16;
  c.delta = 1;
  c.patch = 8;
  c.iterations = 2;
  c.heads = 2;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 31;
  c.data_dir = tiny_data_dir();
  return c;
}

std::vector<double> snapshot(const std::vector<NamedParam>& params) {
  std::vector<double> out;
  for (const NamedParam& p : params) {
    out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  }
  return out;
}

void give_grad(Tensor& p, const std::vector<double>& g) {
  Tensor probe = Tensor::from_data(p.shape(), g);
  sum_all(mul(p, probe)).backward();
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adamw leaves parameters unchanged under zero gradient and zero decay") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.25}, true);
  give_grad(p, {0.0, 0.0, 0.0});
  std::vector<NamedParam> params{{"p", p}};
  AdamW opt;
  opt.lr = 0.1;
  for (int i = 0; i < 5; ++i) adamw_step(params, opt);
  CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.25});
  CHECK(opt.step_count == 5);
}

TEST_CASE("adamw matches an independent scalar simulation and converges to unit steps") {
  const double lr = 5e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.3;
  Tensor p = Tensor::from_data({1}, {0.5}, true);
  std::vector<NamedParam> params{{"p", p}};
  AdamW opt;
  opt.lr = lr;

  double sp = 0.5, sm = 0.0, sv = 0.0, last_step = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    give_grad(p, {g});
    adamw_step(params, opt);

    sm = b1 * sm + (1.0 - b1) * g;
    sv = b2 * sv + (1.0 - b2) * g * g;
    double mhat = sm / (1.0 - std::pow(b1, static_cast<double>(t)));
    double vhat = sv / (1.0 - std::pow(b2, static_cast<double>(t)));
    double prev = sp;
    sp -= lr * (mhat / (std::sqrt(vhat) + eps) + 0.0 * sp);
    last_step = std::abs(sp - prev);
    if (t % 100 == 0) CHECK(p.data()[0] == sp);
  }
  CHECK(std::abs(last_step - lr) / lr < 1e-3);
  CHECK(std::abs(std::abs(p.data()[0] - 0.5) / 1000.0 - lr) / lr < 1e-2);
}

TEST_CASE("adamw with zero gradient applies the pure decoupled shrink") {
  const double lr = 0.01, wd = 0.5;
  Tensor p = Tensor::from_data({2}, {2.0, -4.0}, true);
  give_grad(p, {0.0, 0.0});
  std::vector<NamedParam> params{{"p", p}};
  AdamW opt;
  opt.lr = lr;
  opt.weight_decay = wd;

  std::vector<double> expect{2.0, -4.0};
  for (int t = 0; t < 3; ++t) {
    for (double& x : expect) x -= lr * wd * x;
    adamw_step(params, opt);
    CHECK(p.data() == expect);
  }
}

TEST_CASE("clip_gradients rescales only when the global norm exceeds the bound") {
  Tensor a = Tensor::from_data({2}, {0.0, 0.0}, true);
  Tensor b = Tensor::from_data({1}, {0.0}, true);
  give_grad(a, {3.0, 0.0});
  give_grad(b, {4.0});
  std::vector<NamedParam> params{{"a", a}, {"b", b}};

  double norm = clip_gradients(params, 1.0);
  CHECK(norm == doctest::Approx(5.0).epsilon(1e-12));
  double sq = 0.0;
  for (const NamedParam& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));

  give_grad(a, {0.3, 0.0});
  give_grad(b, {0.4});
  double small = clip_gradients(params, 1.0);
  CHECK(small == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.grad()[0] == 0.3);
  CHECK(b.grad()[0] == 0.4);
}

TEST_CASE("epoch_batches partitions indices and keeps same-label pairs in full batches") {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 6; ++c) {
    for (int k = 0; k < 8; ++k) labels.push_back(c);
  }
  auto batches = epoch_batches(labels, 16, 99, 0);
  REQUIRE(batches.size() == 3);

  std::set<std::size_t> seen;
  for (const auto& batch : batches) {
    REQUIRE(batch.size() == 16);
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t idx : batch) {
      CHECK(seen.insert(idx).second);
      ++counts[labels[idx]];
    }
    for (auto [label, count] : counts) CHECK(count >= 2);
  }
  CHECK(seen.size() == 48);

  auto again = epoch_batches(labels, 16, 99, 0);
  CHECK(again == batches);
  auto next_epoch = epoch_batches(labels, 16, 99, 1);
  CHECK(next_epoch != batches);
}

TEST_CASE("epoch_batches drops a trailing singleton") {
  std::vector<std::size_t> labels{0, 0, 0, 1, 1};
  auto batches = epoch_batches(labels, 4, 7, 0);
  REQUIRE(batches.size() == 1);
  CHECK(batches[0].size() == 4);
}

TEST_CASE("config json round-trips, rejects unknown keys, and validates invariants") {
  TrainConfig c = tiny_config();
  TrainConfig back = parse_train_config(train_config_json(c));
  CHECK(config_hash(back) == config_hash(c));

  CHECK_THROWS_AS(parse_train_config("{\"learning_rate\": 0.1}"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("not json"), FormatError);

  TrainConfig defaults = parse_train_config("{}");
  CHECK(defaults.lr == 5e-4);
  CHECK(defaults.batch_size == 16);
  CHECK(defaults.epochs == 50);
  CHECK(defaults.tau == 0.07);

  TrainConfig bad = tiny_config();
  bad.delta = bad.frames;
  CHECK_THROWS_WITH_AS(validate_config(bad), "temporal interval exceeds clip length",
                       ConfigError);
  bad.delta = 0;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  TrainConfig small_batch = tiny_config();
  small_batch.batch_size = 1;
  CHECK_THROWS_AS(validate_config(small_batch), ConfigError);

  TrainConfig ta = tiny_config();
  ta.temporal_attention = true;
  CHECK_THROWS_AS(validate_config(ta), ConfigError);
}

TEST_CASE("forward_clip produces the contracted shapes") {
  TrainConfig c = tiny_config();
  Manifest man = load_manifest(c.data_dir + "/manifest.json");
  auto clips = encode_split(man, {man.train[0]}, c);
  REQUIRE(clips.size() == 1);
  Model model = make_model(c, man.classes);

  ClipForward f = forward_clip(model, clips[0].feats, c.delta);
  CHECK(f.slots.tokens.shape() == Shape{4, 2, 16});
  CHECK(f.slots.attn.shape() == Shape{4, 2, 36});
  CHECK(f.interacted.shape() == Shape{4, 2, 16});
  CHECK(f.states.s.shape() == Shape{3, 2, 16});
  CHECK(f.logits.shape() == Shape{6});
}

TEST_CASE("one batch with lr=0 leaves parameters unchanged and losses finite") {
  TrainConfig c = tiny_config();
  Manifest man = load_manifest(c.data_dir + "/manifest.json");
  auto clips = encode_split(man, man.train, c);
  Model model = make_model(c, man.classes);
  AdamW opt;
  opt.lr = 0.0;
  opt.weight_decay = 0.0;

  std::vector<NamedParam> params = model_params(model);
  std::vector<double> before = snapshot(params);
  StepLog log = train_one_batch(model, opt, clips, {0, 1, 2, 3}, c, 0, 0, 0);
  CHECK(std::isfinite(log.total));
  CHECK(log.total == doctest::Approx(log.l_obj + log.l_temp + log.l_cls).epsilon(1e-9));
  CHECK(snapshot(params) == before);
}

TEST_CASE("training steps never touch the frozen features") {
  TrainConfig c = tiny_config();
  Manifest man = load_manifest(c.data_dir + "/manifest.json");
  auto clips = encode_split(man, man.train, c);
  Model model = make_model(c, man.classes);
  AdamW opt;
  opt.lr = c.lr;

  std::vector<double> grid_before = clips[0].feats.grid.data();
  std::vector<double> cls_before = clips[0].feats.cls.data();
  for (std::size_t s = 0; s < 3; ++s) {
    train_one_batch(model, opt, clips, {0, 1, 2, 3}, c, 0, s, s);
  }
  CHECK(clips[0].feats.grid.data() == grid_before);
  CHECK(clips[0].feats.cls.data() == cls_before);
  CHECK_FALSE(clips[0].feats.grid.requires_grad());
}

TEST_CASE("a poisoned clip aborts with the batch identity in the message") {
  TrainConfig c = tiny_config();
  Manifest man = load_manifest(c.data_dir + "/manifest.json");
  auto clips = encode_split(man, man.train, c);
  Model model = make_model(c, man.classes);
  AdamW opt;

  clips[1].feats.cls.data()[0] = std::nan("");
  try {
    train_one_batch(model, opt, clips, {0, 1, 2, 3}, c, 4, 2, 17);
    FAIL("expected NanAbortError");
  } catch (const NanAbortError& e) {
    std::string msg = e.what();
    CHECK(msg.find("epoch 4") != std::string::npos);
    CHECK(msg.find("batch 2") != std::string::npos);
    CHECK(msg.find(clips[1].id) != std::string::npos);
  }
}

TEST_CASE("untrained accuracy sits at chance on a balanced split") {
  TrainConfig c = tiny_config();
  Manifest man = load_manifest(c.data_dir + "/manifest.json");
  auto clips = encode_split(man, man.val, c);
  Model model = make_model(c, man.classes);

  EvalReport rep = evaluate_split(model, clips, c);
  CHECK(rep.clips == clips.size());
  // The zero head gives uniform logits; argmax resolves to class 0.
  std::size_t zeros = 0;
  for (const auto& ec : clips) zeros += ec.label == 0;
  CHECK(rep.accuracy ==
        static_cast<double>(zeros) / static_cast<double>(clips.size()));
  CHECK(rep.has_masks);
  CHECK(rep.jf > 0.0);
  CHECK(rep.jf < 1.0);
  CHECK(rep.random_jf > 0.0);
  CHECK(rep.fg_bg_norm_ratio >= 0.0);
}

TEST_CASE("checkpoint round-trip restores training bit-exactly") {
  TrainConfig c = tiny_config();
  Manifest man = load_manifest(c.data_dir + "/manifest.json");
  auto clips = encode_split(man, man.train, c);

  Model model = make_model(c, man.classes);
  AdamW opt;
  opt.lr = c.lr;
  opt.weight_decay = c.weight_decay;
  train_one_batch(model, opt, clips, {0, 1, 2, 3}, c, 0, 0, 0);

  std::string dir = (std::filesystem::temp_directory_path() / "objvid_ckpt_test").string();
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, model, opt, 1, c);
  Checkpoint ck = load_checkpoint(dir);
  CHECK(ck.step == 1);
  CHECK(ck.opt.step_count == opt.step_count);
  CHECK(config_hash(ck.config) == config_hash(c));

  std::vector<NamedParam> orig = model_params(model);
  std::vector<NamedParam> restored = model_params(ck.model);
  REQUIRE(orig.size() == restored.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].name == restored[i].name);
    CHECK(orig[i].tensor.data() == restored[i].tensor.data());
  }
  REQUIRE(ck.opt.m.size() == opt.m.size());
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    CHECK(ck.opt.m[i].data() == opt.m[i].data());
    CHECK(ck.opt.v[i].data() == opt.v[i].data());
  }

  // One further identical batch on both copies stays bit-identical.
  train_one_batch(model, opt, clips, {4, 5, 6, 7}, c, 0, 1, 1);
  train_one_batch(ck.model, ck.opt, clips, {4, 5, 6, 7}, c, 0, 1, 1);
  orig = model_params(model);
  restored = model_params(ck.model);
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].tensor.data() == restored[i].tensor.data());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("a tampered checkpoint config fails the hash check") {
  TrainConfig c = tiny_config();
  Model model = make_model(c, 6);
  AdamW opt;
  std::string dir = (std::filesystem::temp_directory_path() / "objvid_ckpt_bad").string();
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, model, opt, 0, c);

  std::ifstream in(dir + "/index.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto pos = text.find("\"lambda\": 1.0");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 13, "\"lambda\": 2.0");
  std::ofstream out(dir + "/index.json");
  out << text;
  out.close();

  CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("seed-matched tiny runs produce identical loss logs") {
  TrainConfig c = tiny_config();
  c.epochs = 2;
  TrainResult a = train(c);
  TrainResult b = train(c);
  REQUIRE(a.log.size() == b.log.size());
  REQUIRE(a.log.size() == 6);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].total == b.log[i].total);
    CHECK(a.log[i].l_obj == b.log[i].l_obj);
    CHECK(a.log[i].l_temp == b.log[i].l_temp);
    CHECK(a.log[i].l_cls == b.log[i].l_cls);
  }
  CHECK(a.val_report.accuracy == b.val_report.accuracy);
}

TEST_CASE("gradcheck suite passes for every trainable module") {
  auto reports = gradcheck_modules("all", 2024);
  REQUIRE(reports.size() == 4);
  for (const auto& r : reports) {
    INFO(r.module, " max_rel_err=", r.max_rel_err);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_err < 1e-4);
  }
  CHECK_THROWS_AS(gradcheck_modules("bogus", 1), ConfigError);
}

}  // TEST_SUITE
