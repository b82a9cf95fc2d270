#include "progdit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "progdit/errors.hpp"
#include "progdit/parallel.hpp"

namespace progdit {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- checkpoints ----

void save_checkpoint(const std::string& path, const RunConfig& cfg, const GenerativeModel& model,
                     const LatentCodec& codec, const FeatureRanges& ranges, int64_t step,
                     const std::string& rng_state, const std::string& opt_state) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot write " + path);
  os.write("PDCK1", 5);
  json head;
  head["config"] = json::parse(cfg.to_json_string());
  head["step"] = step;
  head["rng"] = rng_state;
  head["ranges"] = ranges.to_string();
  head["codec_kind"] = codec.kind();
  json names = json::array();
  for (const auto& [name, t] : model.params().items()) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    names.push_back(e);
  }
  head["params"] = names;
  const std::string htext = head.dump();
  const uint64_t hlen = htext.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  save_param_table(os, model.params());
  if (codec.kind() == "trainable") {
    os.put(1);
    static_cast<const TrainableCodec&>(codec).save(os);
  } else {
    os.put(0);
  }
  const uint64_t olen = opt_state.size();
  os.write(reinterpret_cast<const char*>(&olen), sizeof(olen));
  os.write(opt_state.data(), static_cast<std::streamsize>(olen));
  if (!os) throw DataError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "PDCK1", 5) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  is.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw DataError("checkpoint: truncated header in " + path);
  json head = json::parse(htext);

  LoadedCheckpoint out;
  out.config = RunConfig::from_json_string(head.at("config").dump());
  out.step = head.at("step").get<int64_t>();
  out.rng_state = head.at("rng").get<std::string>();
  out.ranges = FeatureRanges::from_string(head.at("ranges").get<std::string>());
  out.model = std::make_unique<GenerativeModel>(out.config.model, out.config.dtype_enum());
  load_param_table(is, out.model->params());
  const int has_codec = is.get();
  if (has_codec == 1) {
    out.codec = std::make_unique<TrainableCodec>(TrainableCodec::load(is));
  } else {
    out.codec = std::make_unique<FixedCodec>(FixedCodec::factor8());
  }
  uint64_t olen = 0;
  is.read(reinterpret_cast<char*>(&olen), sizeof(olen));
  if (olen > 0) {
    out.opt_state.resize(olen);
    is.read(out.opt_state.data(), static_cast<std::streamsize>(olen));
  }
  if (!is) throw DataError("checkpoint: truncated in " + path);
  return out;
}

// ---- dataset ----

Dataset build_dataset(const std::vector<ManifestRow>& rows, const std::string& data_dir,
                      const LatentCodec& codec, const GenerativeModel& model,
                      const FeatureRanges& ranges) {
  Dataset ds;
  const DType dt = model.params().dtype();
  std::unordered_map<std::string, Tensor> latent_cache;
  auto latent_of = [&](const std::string& rel) {
    auto it = latent_cache.find(rel);
    if (it != latent_cache.end()) return it->second;
    const Image img = read_pgm((fs::path(data_dir) / rel).string());
    Latent z = codec.encode(image_to_tensor(img, dt));
    latent_cache.emplace(rel, z.data);
    return z.data;
  };
  for (const auto& row : rows) {
    TrainSample s;
    s.row = row;
    s.z0 = latent_of(row.target_path);
    s.baseline_z = latent_of(row.baseline_path);
    s.toks = model.conditioner().tokenize_prompt(row.prompt);
    s.amd = build_amd(row.to_prompt_record(), ranges);
    if (row.split == "train")
      ds.train.push_back(std::move(s));
    else
      ds.test.push_back(std::move(s));
  }
  return ds;
}

// ---- loss ----

Tensor diffusion_loss(const GenerativeModel& model, const NoiseSchedule& ns,
                      const std::vector<const TrainSample*>& batch,
                      const std::vector<int>& timesteps, const std::vector<bool>& dropped,
                      const std::vector<Tensor>& noises,
                      const std::function<double(int)>& weight) {
  if (batch.empty()) throw std::invalid_argument("diffusion_loss: empty batch");
  const auto v_res = model.default_v_res();
  const AuxMetadata neutral = neutral_amd();
  const TokenizedPrompt empty_toks = model.conditioner().tokenize_prompt("");
  Tensor total;
  for (size_t b = 0; b < batch.size(); ++b) {
    const TrainSample& s = *batch[b];
    const int t = timesteps[b];
    Tensor z_t = ns.q_sample(s.z0, t, noises[b]);
    Tensor v_t = ns.v_target(s.z0, noises[b], t);
    EncodedCondition ec = dropped[b]
                              ? model.conditioner().encode(empty_toks, neutral, {0.5, 0.5, 0.5, 0.5})
                              : model.conditioner().encode(s.toks, s.amd, v_res);
    Tensor v_hat = model.velocity(z_t, static_cast<double>(t), ec);
    Tensor diff = sub(v_hat, v_t);
    Tensor l = scale(mean_all(mul(diff, diff)),
                     weight(t) / static_cast<double>(batch.size()));
    total = total.defined() ? add(total, l) : l;
  }
  return total;
}

// ---- training run ----

namespace {

std::vector<Tensor> collect_train_images(const std::vector<ManifestRow>& rows,
                                         const std::string& data_dir, DType dt) {
  std::set<std::string> paths;
  for (const auto& r : rows)
    if (r.split == "train") {
      paths.insert(r.baseline_path);
      paths.insert(r.target_path);
    }
  std::vector<Tensor> images;
  for (const auto& p : paths)
    images.push_back(image_to_tensor(read_pgm((fs::path(data_dir) / p).string()), dt));
  return images;
}

std::string opt_state_string(const AdamW& opt) {
  std::ostringstream ss(std::ios::binary);
  opt.save_state(ss);
  return ss.str();
}

}  // namespace

TrainRunResult run_training(const RunConfig& cfg, const std::string& data_dir,
                            const std::string& out_dir, const std::string& resume_from) {
  cfg.validate();
  fs::create_directories(out_dir);
  cfg.save((fs::path(out_dir) / "config.resolved.json").string());

  const auto rows = read_manifest((fs::path(data_dir) / "manifest.jsonl").string());
  if (rows.empty()) throw DataError("train: empty manifest");
  const NoiseSchedule ns = cfg.make_schedule();
  const DType dt = cfg.dtype_enum();
  const auto weight = make_loss_weight(cfg.trainer.loss_weight);

  std::unique_ptr<GenerativeModel> model;
  std::unique_ptr<LatentCodec> codec;
  FeatureRanges ranges;
  Rng rng(0);
  int64_t start_step = 0;
  std::optional<LoadedCheckpoint> resumed;

  if (!resume_from.empty()) {
    resumed = load_checkpoint(resume_from);
    model = std::move(resumed->model);
    codec = std::move(resumed->codec);
    ranges = resumed->ranges;
    rng = Rng::from_state_string(resumed->rng_state);
    start_step = resumed->step;
  } else {
    ranges = fit_ranges(rows, "train");
    if (cfg.codec.kind == "trainable") {
      auto trainable = std::make_unique<TrainableCodec>(cfg.codec.c1, cfg.codec.c2, dt,
                                                        cfg.seed ^ 0xc0dec);
      const auto images = collect_train_images(rows, data_dir, dt);
      CodecTrainConfig ctc;
      ctc.steps = cfg.codec.steps;
      ctc.batch = cfg.codec.batch;
      ctc.lr = cfg.codec.lr;
      ctc.seed = cfg.seed ^ 0xc0dec7ull;
      std::cerr << "[train] codec: " << images.size() << " train images, " << ctc.steps
                << " steps\n";
      const auto cres = trainable->train(images, ctc);
      trainable->calibrate(images);
      std::cerr << "[train] codec reconstruction mse " << cres.final_mse << "\n";
      codec = std::move(trainable);
    } else {
      codec = std::make_unique<FixedCodec>(FixedCodec::factor8());
    }
    model = std::make_unique<GenerativeModel>(cfg.model, dt);
    model->init_params(cfg.seed);
    rng = Rng(cfg.seed ^ 0x77a19);
  }
  ranges.save((fs::path(out_dir) / "feature-ranges.txt").string());

  Dataset ds = build_dataset(rows, data_dir, *codec, *model, ranges);
  if (ds.train.empty()) throw DataError("train: no training pairs");
  std::cerr << "[train] " << ds.train.size() << " train pairs, " << ds.test.size()
            << " test pairs, " << model->params().total_parameters() << " parameters\n";

  AdamW opt(model->params(), cfg.trainer);
  if (resumed && !resumed->opt_state.empty()) {
    std::istringstream ss(resumed->opt_state);
    opt.load_state(ss);
  }

  const std::string loss_csv = (fs::path(out_dir) / "loss.csv").string();
  std::ofstream log(loss_csv, start_step > 0 ? std::ios::app : std::ios::out);
  if (start_step == 0) log << "step,lr,loss\n";

  TrainRunResult res;
  res.steps_run = cfg.trainer.total_steps - start_step;
  const int n_train = static_cast<int>(ds.train.size());
  char line[128];

  for (int64_t step = start_step + 1; step <= cfg.trainer.total_steps; ++step) {
    Tape::active().clear();
    model->params().zero_grads();
    std::vector<const TrainSample*> batch;
    std::vector<int> ts;
    std::vector<bool> dropped;
    std::vector<Tensor> noises;
    for (int64_t b = 0; b < cfg.trainer.batch_size; ++b) {
      const auto& s = ds.train[rng.uniform_index(static_cast<uint64_t>(n_train))];
      batch.push_back(&s);
      ts.push_back(1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(ns.n_steps()))));
      dropped.push_back(rng.bernoulli(cfg.trainer.cond_drop_prob));
      noises.push_back(Tensor::randn(s.z0.shape(), rng, 1.0, dt));
    }
    Tensor loss = diffusion_loss(*model, ns, batch, ts, dropped, noises, weight);
    const double lval = loss.scalar();
    if (!std::isfinite(lval)) {
      save_checkpoint((fs::path(out_dir) / "checkpoint_abort.ckpt").string(), cfg, *model,
                      *codec, ranges, step - 1, rng.state_string(), opt_state_string(opt));
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         "; last finite state saved to checkpoint_abort.ckpt");
    }
    backward(loss);
    const double lr = lr_at(step, cfg.trainer);
    opt.step(lr);
    if (step == start_step + 1) res.first_loss = lval;
    res.last_loss = lval;
    std::snprintf(line, sizeof(line), "%lld,%.10e,%.10e\n", static_cast<long long>(step), lr,
                  lval);
    log << line;
    if (step % 100 == 0) {
      log.flush();
      std::cerr << "[train] step " << step << " loss " << lval << " lr " << lr << "\n";
    }
    if (cfg.trainer.checkpoint_every > 0 && step % cfg.trainer.checkpoint_every == 0 &&
        step < cfg.trainer.total_steps) {
      const std::string p =
          (fs::path(out_dir) / ("checkpoint_" + std::to_string(step) + ".ckpt")).string();
      save_checkpoint(p, cfg, *model, *codec, ranges, step, rng.state_string(),
                      opt_state_string(opt));
    }
  }
  res.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
  save_checkpoint(res.final_checkpoint, cfg, *model, *codec, ranges, cfg.trainer.total_steps,
                  rng.state_string(), opt_state_string(opt));
  return res;
}

// ---- generation / evaluation ----

Tensor generate_latent(const GenerativeModel& model, const NoiseSchedule& ns,
                       const EncodedCondition& cond, const EncodedCondition& uncond,
                       const Tensor* baseline, const SamplerConfig& scfg) {
  NoGradGuard ng;
  SampleInputs in;
  in.cond_v = [&](const Tensor& z, double t, double, double) {
    return model.velocity(z, t, cond);
  };
  in.uncond_v = [&](const Tensor& z, double t, double, double) {
    return model.velocity(z, t, uncond);
  };
  in.schedule = &ns;
  const auto& mc = model.config();
  in.latent_shape = {mc.latent_channels, mc.latent_h, mc.latent_w};
  in.dtype = model.params().dtype();
  in.baseline = baseline;
  return sample(in, scfg);
}

EncodedCondition condition_for_row(const GenerativeModel& model, const ManifestRow& row,
                                   const FeatureRanges& ranges) {
  const PromptRecord rec = row.to_prompt_record();
  return model.encode_condition(build_prompt(rec), build_amd(rec, ranges),
                                model.default_v_res());
}

EvalResult run_eval(const LoadedCheckpoint& ckpt, const std::vector<ManifestRow>& rows,
                    const std::string& data_dir, const std::string& out_dir,
                    const EvalOptions& opts) {
  fs::create_directories(out_dir);
  const NoiseSchedule ns = ckpt.config.make_schedule();
  const DType dt = ckpt.config.dtype_enum();
  NoGradGuard ng;
  const EncodedCondition uncond = ckpt.model->encode_unconditional();

  std::vector<const ManifestRow*> selected;
  for (const auto& row : rows) {
    if (row.split != opts.split) continue;
    if (opts.max_pairs > 0 && static_cast<int>(selected.size()) >= opts.max_pairs) break;
    selected.push_back(&row);
  }
  if (selected.empty()) throw DataError("eval: no rows in split '" + opts.split + "'");

  // slot-indexed results: identical bytes for any thread count
  std::vector<MetricSample> gen_samples(selected.size());
  std::vector<MetricSample> base_samples(selected.size());
  parallel_for(
      static_cast<int64_t>(selected.size()), ckpt.config.threads, [&](int64_t i) {
        const ManifestRow& row = *selected[static_cast<size_t>(i)];
        const Image baseline_img =
            read_pgm((fs::path(data_dir) / row.baseline_path).string());
        const Image target_img = read_pgm((fs::path(data_dir) / row.target_path).string());

        Image generated;
        if (opts.generator == "identity") {
          generated = baseline_img;
        } else if (opts.generator == "target") {
          generated = target_img;
        } else {
          const Latent base_z = ckpt.codec->encode(image_to_tensor(baseline_img, dt));
          EncodedCondition cond = condition_for_row(*ckpt.model, row, ckpt.ranges);
          SamplerConfig scfg = ckpt.config.sampler;
          scfg.seed = fnv1a64(row.pair_id) ^ opts.seed;
          Tensor zgen = generate_latent(*ckpt.model, ns, cond, uncond, &base_z.data, scfg);
          generated = tensor_to_image(ckpt.codec->decode(Latent{zgen, true}));
        }

        const std::string group = row.diagnosis_baseline + " to " + row.diagnosis_target;
        MetricSample& gen = gen_samples[static_cast<size_t>(i)];
        gen.pair_id = row.pair_id;
        gen.subject_id = row.subject_id;
        gen.model = "generated";
        gen.ssim = ssim(generated, target_img);
        gen.psnr_db = psnr(generated, target_img);
        gen.mse = mse(generated, target_img);
        gen.delta_t = row.delta_t;
        gen.progression_group = group;

        MetricSample& base = base_samples[static_cast<size_t>(i)];
        base.pair_id = row.pair_id;
        base.subject_id = row.subject_id;
        base.model = "identity-baseline";
        base.ssim = ssim(baseline_img, target_img);
        base.psnr_db = psnr(baseline_img, target_img);
        base.mse = mse(baseline_img, target_img);
        base.delta_t = row.delta_t;
        base.progression_group = group;

        if (opts.error_maps) {
          Image err = Image::zeros(target_img.h, target_img.w);
          for (size_t k = 0; k < err.px.size(); ++k)
            err.px[k] = std::abs(generated.px[k] - target_img.px[k]);
          write_pgm((fs::path(out_dir) / ("errmap_" + row.pair_id + ".pgm")).string(), err);
        }
      });

  std::vector<MetricSample> samples;
  double ssim_sum = 0.0;
  const int used = static_cast<int>(selected.size());
  for (size_t i = 0; i < selected.size(); ++i) {
    ssim_sum += gen_samples[i].ssim;
    samples.push_back(gen_samples[i]);
    samples.push_back(base_samples[i]);
  }

  EvalResult res;
  res.samples = samples;
  res.report = stratified_report(samples, "generated");
  res.mean_ssim_generated = ssim_sum / static_cast<double>(used);

  std::ofstream txt((fs::path(out_dir) / "report.txt").string());
  txt << res.report.to_text();
  std::ofstream csv((fs::path(out_dir) / "report.csv").string());
  csv << res.report.to_csv();
  std::ofstream pairs((fs::path(out_dir) / "pairs.csv").string());
  pairs << "pair_id,subject_id,model,ssim,psnr,mse,delta_t,group\n";
  char buf[256];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.8f,%.6f,%.8f,%g,%s\n", s.pair_id.c_str(),
                  s.subject_id.c_str(), s.model.c_str(), s.ssim, s.psnr_db, s.mse, s.delta_t,
                  s.progression_group.c_str());
    pairs << buf;
  }
  return res;
}

std::vector<int64_t> ventricle_area_series(const LoadedCheckpoint& ckpt, const ManifestRow& row,
                                           const std::string& data_dir,
                                           const std::vector<double>& delta_ts,
                                           const SamplerConfig& scfg) {
  NoGradGuard ng;
  const NoiseSchedule ns = ckpt.config.make_schedule();
  const DType dt = ckpt.config.dtype_enum();
  const Image baseline_img = read_pgm((fs::path(data_dir) / row.baseline_path).string());
  const Latent base_z = ckpt.codec->encode(image_to_tensor(baseline_img, dt));
  const EncodedCondition uncond = ckpt.model->encode_unconditional();

  std::vector<int64_t> areas;
  for (double dtm : delta_ts) {
    PromptRecord rec = row.to_prompt_record();
    rec.delta_t_months = dtm;
    // counterfactual clinical trajectory consistent with the cohort model
    rec.score_deltas =
        expected_score_deltas(rec.diagnosis_baseline, rec.diagnosis_target, dtm);
    EncodedCondition cond = ckpt.model->encode_condition(
        build_prompt(rec), build_amd(rec, ckpt.ranges), ckpt.model->default_v_res());
    SamplerConfig sc = scfg;  // same seed for every dt: only conditioning varies
    Tensor zgen = generate_latent(*ckpt.model, ns, cond, uncond, &base_z.data, sc);
    const Image gen = tensor_to_image(ckpt.codec->decode(Latent{zgen, true}));
    areas.push_back(ventricle_area(gen));
  }
  return areas;
}

}  // namespace progdit
