#include "toydiff/config.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

namespace toydiff {

namespace {

using nlohmann::json;

json to_json(const RunConfig& c) {
  return json{
      {"model",
       {{"image", c.model.image},
        {"channels", c.model.channels},
        {"patch", c.model.patch},
        {"d_model", c.model.d_model},
        {"n_blocks", c.model.n_blocks},
        {"n_heads", c.model.n_heads},
        {"d_ff", c.model.d_ff},
        {"time_dim", c.model.time_dim}}},
      {"schedule", {{"T_train", c.schedule_T}, {"s", c.schedule_s}}},
      {"rng", {{"name", "philox4x32-10"}, {"version", 1}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"warmup", c.train.warmup},
        {"ema_decay", c.train.ema_decay},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"grad_clip", c.train.grad_clip},
        {"caption_dropout", c.train.caption_dropout},
        {"holdout", c.train.holdout},
        {"log_every", c.train.log_every},
        {"seed", c.train_seed}}},
      {"guidance",
       {{"weights",
         {{"mask", c.guidance.weights.mask},
          {"kl", c.guidance.weights.kl},
          {"sim", c.guidance.weights.sim},
          {"dis", c.guidance.weights.dis},
          {"att", c.guidance.weights.att}}},
        {"k_iters", c.guidance.k_iters},
        {"alpha_start", c.guidance.alpha_start},
        {"alpha_end", c.guidance.alpha_end},
        {"window_mask_kl", c.guidance.window_mask_kl},
        {"window_att", c.guidance.window_att},
        {"window_iou", c.guidance.window_iou},
        {"tau_dis", c.guidance.tau_dis},
        {"cfg_scale", c.guidance.cfg_scale},
        {"total_steps", c.guidance.total_steps},
        {"use_iou", c.guidance.use_iou},
        {"use_mask", c.guidance.use_mask},
        {"use_kl", c.guidance.use_kl},
        {"use_att", c.guidance.use_att}}},
      {"output", {{"image_scale", c.image_scale}}}};
}

RunConfig from_json(const json& j) {
  RunConfig c;
  const json& m = j.at("model");
  c.model.image = m.at("image");
  c.model.channels = m.at("channels");
  c.model.patch = m.at("patch");
  c.model.d_model = m.at("d_model");
  c.model.n_blocks = m.at("n_blocks");
  c.model.n_heads = m.at("n_heads");
  c.model.d_ff = m.at("d_ff");
  c.model.time_dim = m.at("time_dim");
  c.schedule_T = j.at("schedule").at("T_train");
  c.schedule_s = j.at("schedule").at("s");
  check(j.at("rng").at("name") == "philox4x32-10" && j.at("rng").at("version") == 1,
        "config: unsupported rng identifier");
  const json& t = j.at("train");
  c.train.steps = t.at("steps");
  c.train.batch = t.at("batch");
  c.train.lr = t.at("lr");
  c.train.warmup = t.at("warmup");
  c.train.ema_decay = t.at("ema_decay");
  c.train.beta1 = t.at("beta1");
  c.train.beta2 = t.at("beta2");
  c.train.adam_eps = t.at("adam_eps");
  c.train.grad_clip = t.at("grad_clip");
  c.train.caption_dropout = t.at("caption_dropout");
  c.train.holdout = t.at("holdout");
  c.train.log_every = t.at("log_every");
  c.train_seed = t.at("seed");
  const json& g = j.at("guidance");
  const json& w = g.at("weights");
  c.guidance.weights.mask = w.at("mask");
  c.guidance.weights.kl = w.at("kl");
  c.guidance.weights.sim = w.at("sim");
  c.guidance.weights.dis = w.at("dis");
  c.guidance.weights.att = w.at("att");
  c.guidance.k_iters = g.at("k_iters");
  c.guidance.alpha_start = g.at("alpha_start");
  c.guidance.alpha_end = g.at("alpha_end");
  c.guidance.window_mask_kl = g.at("window_mask_kl");
  c.guidance.window_att = g.at("window_att");
  c.guidance.window_iou = g.at("window_iou");
  c.guidance.tau_dis = g.at("tau_dis");
  c.guidance.cfg_scale = g.at("cfg_scale");
  c.guidance.total_steps = g.at("total_steps");
  c.guidance.use_iou = g.at("use_iou");
  c.guidance.use_mask = g.at("use_mask");
  c.guidance.use_kl = g.at("use_kl");
  c.guidance.use_att = g.at("use_att");
  c.image_scale = j.at("output").at("image_scale");
  c.validate();
  return c;
}

void reject_unknown_keys(const json& user, const json& defaults, const std::string& path) {
  if (!user.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    std::string here = path.empty() ? key : path + "." + key;
    check(defaults.is_object() && defaults.contains(key), "config: unknown key '" + here + "'");
    reject_unknown_keys(value, defaults.at(key), here);
  }
}

}  // namespace

std::string serialize_config(const RunConfig& cfg) { return to_json(cfg).dump(2); }

RunConfig parse_config(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  json merged = to_json(RunConfig{});
  reject_unknown_keys(user, merged, "");
  merged.merge_patch(user);
  try {
    return from_json(merged);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid value: ") + e.what());
  }
}

}  // namespace toydiff
