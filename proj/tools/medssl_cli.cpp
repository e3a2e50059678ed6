// Command-line front end. Talks to the library only through the C API.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "medssl/medssl.h"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string out_dir = ".";
  std::string run_id;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--out-dir", c.out_dir, "Output directory; relative paths resolve against it")->capture_default_str();
  cmd->add_option("--run-id", c.run_id, "Run name used for the frozen config file (default: command name)");
}

std::string resolve(const Common& c, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? path.string() : (fs::path(c.out_dir) / path).lexically_normal().string();
}

int fail(medssl_status s) {
  std::fprintf(stderr, "error (%s): %s\n", medssl_status_name(s), medssl_last_error());
  return medssl_exit_code(s);
}

bool write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::fprintf(stderr, "error: cannot write %s\n", path.string().c_str());
    return false;
  }
  return true;
}

// Every run leaves a copy of its resolved options next to its outputs.
bool freeze(CLI::App* cmd, const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  const std::string id = c.run_id.empty() ? cmd->get_name() : c.run_id;
  return write_text(fs::path(c.out_dir) / (id + ".frozen.ini"), cmd->config_to_str(true, false));
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& e : v) s += (s.empty() ? "" : ",") + e;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal self-supervised pretraining and zero-shot retrieval evaluation"};
  app.set_config("--config", "", "Read options from a key=value file; flags override it");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(medssl_version()));

  // synth
  Common synth_c;
  medssl_synth_options synth;
  medssl_synth_options_init(&synth);
  std::vector<std::string> synth_mods;
  std::vector<std::string> synth_parts;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic multimodal corpus");
  add_common(cmd_synth, synth_c);
  cmd_synth->add_option("--modalities", synth_mods, "Modality tags")->delimiter(',')->default_val("xray,ct");
  cmd_synth->add_option("--categories", synth.categories, "Categories per modality")->capture_default_str();
  cmd_synth->add_option("--per-cell", synth.samples_per_cell, "Samples per (modality, category)")->capture_default_str();
  cmd_synth->add_option("--body-parts", synth_parts, "Canonical body-part keys")
      ->delimiter(',')
      ->default_val("chest,abdomen,head,pelvis");
  cmd_synth->add_option("--noise", synth.noise_level, "Uniform noise amplitude")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  cmd_synth->add_option("--image-size", synth.image_size, "Spatial side of each sample")->capture_default_str();

  // pretrain
  Common pre_c;
  medssl_pretrain_options pre;
  medssl_pretrain_options_init(&pre);
  std::string objective = "simdino", manifest = "manifest.tsv", cov_views = "globals";
  std::vector<int> patch{pre.patch[0], pre.patch[1], pre.patch[2], pre.patch[3]};
  std::vector<double> gscale{pre.global_scale[0], pre.global_scale[1]};
  std::vector<double> lscale{pre.local_scale[0], pre.local_scale[1]};
  std::vector<int> local_out{0, 0, 0};
  std::vector<std::string> holdout;
  bool normalize = false, no_head = false;
  auto* cmd_pre = app.add_subcommand("pretrain", "Pretrain an encoder with the mae or simdino objective");
  add_common(cmd_pre, pre_c);
  cmd_pre->add_option("objective", objective, "mae or simdino")
      ->required()
      ->check(CLI::IsMember({"mae", "simdino"}));
  cmd_pre->add_option("--manifest", manifest, "Corpus manifest")->capture_default_str();
  cmd_pre->add_option("--steps", pre.steps, "Optimizer steps")->capture_default_str();
  cmd_pre->add_option("--batch-size", pre.batch_size, "Samples per step")->capture_default_str();
  cmd_pre->add_option("--seed", pre.seed, "Run seed")->capture_default_str();
  cmd_pre->add_option("--lr", pre.lr, "Peak learning rate")->capture_default_str();
  cmd_pre->add_option("--warmup-fraction", pre.warmup_fraction, "Fraction of steps spent in warm-up")->capture_default_str();
  cmd_pre->add_option("--weight-decay", pre.weight_decay, "AdamW weight decay")->capture_default_str();
  cmd_pre->add_option("--embed-dim", pre.embed_dim, "Encoder width")->capture_default_str();
  cmd_pre->add_option("--depth", pre.depth, "Encoder blocks")->capture_default_str();
  cmd_pre->add_option("--heads", pre.heads, "Attention heads")->capture_default_str();
  cmd_pre->add_option("--mlp-ratio", pre.mlp_ratio, "MLP hidden ratio")->capture_default_str();
  cmd_pre->add_option("--patch", patch, "Patch extents c,h,w,s")->delimiter(',')->expected(4)->capture_default_str();
  cmd_pre->add_option("--max-tokens", pre.max_tokens, "Positional table rows (0: from the manifest)")->capture_default_str();
  cmd_pre->add_option("--decoder-width", pre.decoder_width, "MAE decoder width (0: half the encoder)")->capture_default_str();
  cmd_pre->add_option("--decoder-depth", pre.decoder_depth, "MAE decoder blocks")->capture_default_str();
  cmd_pre->add_option("--decoder-heads", pre.decoder_heads, "MAE decoder heads")->capture_default_str();
  cmd_pre->add_option("--head-hidden", pre.head_hidden, "Projection head hidden width (0: encoder width)")->capture_default_str();
  cmd_pre->add_option("--head-out", pre.head_out, "Projection head output width (0: encoder width)")->capture_default_str();
  cmd_pre->add_flag("--no-projection-head", no_head, "Apply the loss to the cls row directly");
  cmd_pre->add_option("--mask-ratio", pre.mask_ratio, "MAE mask ratio")->capture_default_str();
  cmd_pre->add_option("--epsilon", pre.epsilon, "Coding-rate epsilon")->capture_default_str();
  cmd_pre->add_flag("--normalize", normalize, "L2-normalize embeddings inside the loss");
  cmd_pre->add_option("--covariance-views", cov_views, "globals or all")->capture_default_str();
  cmd_pre->add_option("--n-local", pre.n_local, "Local views per sample (-1: per modality)")->capture_default_str();
  cmd_pre->add_option("--global-scale", gscale, "Global crop scale range lo,hi")->delimiter(',')->expected(2)->capture_default_str();
  cmd_pre->add_option("--local-scale", lscale, "Local crop scale range lo,hi")->delimiter(',')->expected(2)->capture_default_str();
  cmd_pre->add_option("--local-out", local_out, "Local view extent h,w,s (0: derived)")->delimiter(',')->expected(3)->capture_default_str();
  cmd_pre->add_option("--holdout", holdout, "Modalities excluded from training")->delimiter(',');
  cmd_pre->add_option("--data-fraction", pre.data_fraction, "Fraction of each modality's samples used")->capture_default_str();
  cmd_pre->add_option("--checkpoint-every", pre.checkpoint_every, "Intermediate checkpoint interval (0: off)")->capture_default_str();

  // embed
  Common emb_c;
  std::string emb_ckpt = "model.ckpt", emb_manifest = "manifest.tsv", emb_out = "embeddings.bin", strategy;
  bool oracle = false;
  auto* cmd_emb = app.add_subcommand("embed", "Extract retrieval embeddings for every manifest row");
  add_common(cmd_emb, emb_c);
  cmd_emb->add_option("--checkpoint", emb_ckpt, "Model checkpoint")->capture_default_str();
  cmd_emb->add_option("--manifest", emb_manifest, "Corpus manifest")->capture_default_str();
  cmd_emb->add_option("--output", emb_out, "Embedding file")->capture_default_str();
  cmd_emb->add_option("--strategy", strategy, "avg, cls or mix (default follows the objective)")
      ->check(CLI::IsMember({"avg", "cls", "mix"}));
  cmd_emb->add_flag("--oracle", oracle, "Use the generating parameters of a synthetic corpus");

  // eval
  Common ev_c;
  std::string ev_emb = "embeddings.bin", rule = "category", map_file, report_prefix = "report";
  std::vector<int> ks;
  std::vector<std::string> query_mods, gallery_mods;
  bool regional_any = false, labeled_only = false;
  int bucket = 5;
  auto* cmd_ev = app.add_subcommand("eval", "Evaluate zero-shot retrieval");
  add_common(cmd_ev, ev_c);
  cmd_ev->add_option("--embeddings", ev_emb, "Embedding file")->capture_default_str();
  cmd_ev->add_option("--rule", rule, "category, regional, lesion or crossmodal")->capture_default_str();
  cmd_ev->add_option("--ks", ks, "Recall cut-offs (default: manifest header, else 1,5,10)")->delimiter(',');
  cmd_ev->add_option("--map", map_file, "Body-part mapping table (crossmodal rule)");
  cmd_ev->add_flag("--regional-any", regional_any, "One agreeing co-annotated region suffices");
  cmd_ev->add_option("--lesion-bucket", bucket, "Lesion size bucket width in mm")->capture_default_str();
  cmd_ev->add_flag("--labeled-only", labeled_only, "Drop records lacking the rule's labels");
  cmd_ev->add_option("--query-modalities", query_mods, "Restrict queries to these modalities")->delimiter(',');
  cmd_ev->add_option("--gallery-modalities", gallery_mods, "Restrict the gallery to these modalities")->delimiter(',');
  cmd_ev->add_option("--report", report_prefix, "Report file prefix (.json and .txt)")->capture_default_str();

  // gradcheck
  Common gc_c;
  medssl_gradcheck_options gc;
  medssl_gradcheck_options_init(&gc);
  std::string gc_obj = "mae";
  bool corrupt = false;
  auto* cmd_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  add_common(cmd_gc, gc_c);
  cmd_gc->add_option("objective", gc_obj, "mae or simdino")->required()->check(CLI::IsMember({"mae", "simdino"}));
  cmd_gc->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  cmd_gc->add_option("--embed-dim", gc.embed_dim, "Encoder width")->capture_default_str();
  cmd_gc->add_option("--depth", gc.depth, "Encoder blocks")->capture_default_str();
  cmd_gc->add_option("--heads", gc.heads, "Attention heads")->capture_default_str();
  cmd_gc->add_option("--batch", gc.batch, "Batch size")->capture_default_str();
  cmd_gc->add_option("--step", gc.h, "Finite-difference step")->capture_default_str();
  cmd_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  cmd_gc->add_flag("--corrupt-gradient", corrupt, "Test hook: double the analytic gradient");

  // scaling-fit
  Common sf_c;
  std::string results;
  auto* cmd_sf = app.add_subcommand("scaling-fit", "Fit y = a x^b to (x, recall) results");
  add_common(cmd_sf, sf_c);
  cmd_sf->add_option("results", results, "File of `x y` lines")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (cmd_synth->parsed()) {
    if (!freeze(cmd_synth, synth_c)) return 2;
    const std::string mods = join(synth_mods), parts = join(synth_parts);
    synth.modalities = mods.c_str();
    synth.body_parts = parts.c_str();
    synth.out_dir = synth_c.out_dir.c_str();
    size_t n = 0;
    if (auto s = medssl_synth(&synth, &n); s != MEDSSL_OK) return fail(s);
    std::printf("wrote %zu samples and %s\n", n, (fs::path(synth_c.out_dir) / "manifest.tsv").string().c_str());
    return 0;
  }

  if (cmd_pre->parsed()) {
    if (!freeze(cmd_pre, pre_c)) return 2;
    const std::string man = resolve(pre_c, manifest), hold = join(holdout);
    pre.objective = objective.c_str();
    pre.manifest = man.c_str();
    pre.out_dir = pre_c.out_dir.c_str();
    for (int i = 0; i < 4; ++i) pre.patch[i] = patch[static_cast<std::size_t>(i)];
    for (int i = 0; i < 2; ++i) {
      pre.global_scale[i] = gscale[static_cast<std::size_t>(i)];
      pre.local_scale[i] = lscale[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 3; ++i) pre.local_out[i] = local_out[static_cast<std::size_t>(i)];
    pre.holdout = hold.c_str();
    pre.normalize = normalize ? 1 : 0;
    pre.projection_head = no_head ? 0 : 1;
    pre.covariance_views = cov_views.c_str();
    medssl_pretrain_result r{};
    if (auto s = medssl_pretrain(&pre, &r); s != MEDSSL_OK) {
      if (s == MEDSSL_NUMERICAL_ERROR)
        std::fprintf(stderr, "diagnostics: %s\n", (fs::path(pre_c.out_dir) / "diagnostic.json").string().c_str());
      return fail(s);
    }
    std::printf("%d steps, %zu parameters, loss %.6g -> %.6g\n", r.steps, r.parameters, r.first_loss, r.last_loss);
    return 0;
  }

  if (cmd_emb->parsed()) {
    if (!freeze(cmd_emb, emb_c)) return 2;
    const std::string ck = resolve(emb_c, emb_ckpt), man = resolve(emb_c, emb_manifest), out = resolve(emb_c, emb_out);
    medssl_embed_options e;
    medssl_embed_options_init(&e);
    e.checkpoint = ck.c_str();
    e.manifest = man.c_str();
    e.output = out.c_str();
    e.strategy = strategy.c_str();
    e.oracle = oracle ? 1 : 0;
    size_t n = 0;
    int dim = 0;
    if (auto s = medssl_embed(&e, &n, &dim); s != MEDSSL_OK) return fail(s);
    std::printf("wrote %zu embeddings of dimension %d to %s\n", n, dim, out.c_str());
    return 0;
  }

  if (cmd_ev->parsed()) {
    if (!freeze(cmd_ev, ev_c)) return 2;
    const std::string emb = resolve(ev_c, ev_emb), map = resolve(ev_c, map_file), qm = join(query_mods), gm = join(gallery_mods);
    medssl_eval_options e;
    medssl_eval_options_init(&e);
    e.embeddings = emb.c_str();
    e.rule = rule.c_str();
    e.ks = ks.empty() ? nullptr : ks.data();
    e.k_count = ks.size();
    e.body_part_map = map.c_str();
    e.regional_any = regional_any ? 1 : 0;
    e.lesion_bucket_mm = bucket;
    e.labeled_only = labeled_only ? 1 : 0;
    e.query_modalities = qm.c_str();
    e.gallery_modalities = gm.c_str();
    medssl_report* rep = nullptr;
    if (auto s = medssl_eval(&e, &rep); s != MEDSSL_OK) return fail(s);
    const std::string table = medssl_report_table(rep);
    const bool ok = write_text(resolve(ev_c, report_prefix + ".json"), medssl_report_json(rep)) &&
                    write_text(resolve(ev_c, report_prefix + ".txt"), table);
    medssl_report_free(rep);
    std::fputs(table.c_str(), stdout);
    return ok ? 0 : 2;
  }

  if (cmd_gc->parsed()) {
    if (!freeze(cmd_gc, gc_c)) return 2;
    gc.objective = gc_obj.c_str();
    gc.corrupt_gradient = corrupt ? 1 : 0;
    medssl_gradcheck_report* rep = nullptr;
    if (auto s = medssl_gradcheck(&gc, &rep); s != MEDSSL_OK) return fail(s);
    std::fputs(medssl_gradcheck_table(rep), stdout);
    const bool passed = medssl_gradcheck_passed(rep) != 0;
    medssl_gradcheck_report_free(rep);
    return passed ? 0 : 1;
  }

  if (cmd_sf->parsed()) {
    if (!freeze(cmd_sf, sf_c)) return 2;
    medssl_scaling_report* rep = nullptr;
    if (auto s = medssl_scaling_fit_file(resolve(sf_c, results).c_str(), &rep); s != MEDSSL_OK) return fail(s);
    const std::string table = medssl_scaling_table(rep);
    const bool ok = write_text(resolve(sf_c, "scaling_fit.json"), medssl_scaling_json(rep)) &&
                    write_text(resolve(sf_c, "scaling_fit.txt"), table);
    medssl_scaling_report_free(rep);
    std::fputs(table.c_str(), stdout);
    return ok ? 0 : 2;
  }
  return 2;
}
