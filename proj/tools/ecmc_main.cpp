// ecmc command-line tool: synthetic data generation, two-stage training,
// caption generation, evaluation reports, and the gradient check suite.
//
// Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error,
// 4 numerical divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecmc/checkpoint.hpp"
#include "ecmc/config.hpp"
#include "ecmc/data.hpp"
#include "ecmc/gradsuite.hpp"
#include "ecmc/metrics.hpp"
#include "ecmc/trainer.hpp"

namespace {

using namespace ecmc;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;

    void install(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "flat key=value config file");
        cmd->add_option("--set", sets, "override a config key, e.g. --set lr=0.01")
            ->type_name("KEY=VALUE");
    }

    RunConfig build() const {
        RunConfig cfg;
        if (!config_file.empty()) cfg.apply_file(config_file);
        for (const std::string& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
            cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
        }
        return cfg;
    }
};

std::vector<std::pair<std::string, Var>> checkpoint_sections(const ModelParams& params) {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& p : params.named()) out.emplace_back(p.name, p.var);
    return out;
}

void load_group_from(const std::string& path, ModelParams& params,
                     std::initializer_list<ParamGroup> groups) {
    const auto sections = load_checkpoint(path);
    for (const auto& p : params.in_groups(groups)) {
        auto it = sections.find(p.name);
        if (it == sections.end())
            throw ParseError("'" + path + "': missing section '" + p.name + "'");
        if (!it->second.same_shape(p.var.value()))
            throw ParseError("'" + path + "': section '" + p.name + "' has shape " +
                             it->second.shape_string() + ", config expects " +
                             p.var.value().shape_string());
        const_cast<Var&>(p.var).leaf_value() = it->second;
    }
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& common, const std::string& out_dir, std::uint64_t seed,
                 const std::string& format) {
    RunConfig run = common.build();
    const SyntheticConfig cfg = run.synthetic_config(seed);
    cfg.validate();
    const Dataset dataset = generate_synthetic(cfg);
    const MatrixFileFormat fmt =
        format == "csv" ? MatrixFileFormat::Csv : MatrixFileFormat::Ecmf;
    save_dataset(dataset, out_dir, fmt);

    double neg = 0.0;
    std::array<double, 4> cog = {0, 0, 0, 0};
    for (const auto& s : dataset.samples) {
        if (s.emotion == EmotionLabel::Negative) ++neg;
        for (std::size_t k = 0; k < 4; ++k)
            if (s.cognition.has(kAllCognitionCategories[k])) ++cog[k];
    }
    const double n = static_cast<double>(dataset.size());
    std::printf("wrote %zu samples to %s (train %zu, val %zu, test %zu)\n", dataset.size(),
                out_dir.c_str(), dataset.split_indices(Split::Train).size(),
                dataset.split_indices(Split::Val).size(),
                dataset.split_indices(Split::Test).size());
    std::printf("label rates: negative %.4f", neg / n);
    for (std::size_t k = 0; k < 4; ++k)
        std::printf(", %s %.4f", cognition_category_name(kAllCognitionCategories[k]), cog[k] / n);
    std::printf("\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonOpts& common, const std::string& stage, const std::string& data_dir,
              const std::string& out_dir, std::uint64_t seed, const std::string& ckpt_in,
              const std::string& decoder_ckpt, const std::string& captions_file) {
    RunConfig run = common.build();
    run.validate();
    const ModelConfig model_cfg = run.model_config();
    const TrainConfig train_cfg = run.train_config(seed);
    const ModalityMask mask = ModalityMask::from_string(run.modalities);

    if (stage == "2" && ckpt_in.empty())
        throw ConfigError("train --stage 2 requires --ckpt-in (a stage-1 checkpoint)");
    if (stage == "2" && decoder_ckpt.empty())
        throw ConfigError("train --stage 2 requires --decoder-ckpt (a pretrained decoder)");

    const Dataset dataset = load_dataset(data_dir);
    const Vocab vocab = caption_template_vocab();
    const auto prompt = vocab.encode(run.prompt_tokens());

    Rng init_rng(seed);
    ModelParams params = ModelParams::init(model_cfg, init_rng);
    if (!ckpt_in.empty())
        load_checkpoint_into(ckpt_in, checkpoint_sections(params));
    if (!decoder_ckpt.empty())
        load_group_from(decoder_ckpt, params, {ParamGroup::Decoder});

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());

    LossCurve curve;
    if (stage == "decoder") {
        std::vector<std::vector<std::string>> captions;
        for (std::size_t i : dataset.split_indices(Split::Train))
            captions.push_back(dataset.samples[i].caption);
        curve = pretrain_decoder(captions, vocab, params, model_cfg, prompt, train_cfg);
    } else if (stage == "1") {
        curve = train_stage1(dataset, params, model_cfg, train_cfg, mask);
    } else if (stage == "2") {
        curve = train_stage2(dataset, params, model_cfg, vocab, prompt, train_cfg, mask);
    } else {
        throw ConfigError("--stage must be decoder, 1 or 2, got '" + stage + "'");
    }

    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.ecmb").string();
    save_checkpoint(ckpt_path, checkpoint_sections(params));
    const std::string curve_path = (fs::path(out_dir) / "loss.csv").string();
    curve.write_csv(curve_path);
    std::printf("stage %s done: %zu epochs, checkpoint %s\n", stage.c_str(), curve.rows.size(),
                ckpt_path.c_str());
    if (!curve.rows.empty()) {
        std::printf("final losses:");
        for (std::size_t c = 0; c < curve.columns.size(); ++c)
            std::printf(" %s=%.6f", curve.columns[c].c_str(), curve.rows.back().second[c]);
        std::printf("\n");
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval_embeddings(const CommonOpts& common, const std::string& ckpt,
                        const std::string& data_dir, const std::string& split,
                        const std::string& out_path) {
    RunConfig run = common.build();
    run.validate();
    const ModelConfig model_cfg = run.model_config();
    const ModalityMask mask = ModalityMask::from_string(run.modalities);

    const Dataset dataset = load_dataset(data_dir);
    Rng rng(0);
    ModelParams params = ModelParams::init(model_cfg, rng);
    load_checkpoint_into(ckpt, checkpoint_sections(params));

    const auto indices = dataset.split_indices(split_from_string(split));
    if (indices.size() < 3)
        throw ContractError("eval embeddings: split '" + split + "' has fewer than 3 samples");
    const auto [he, hc] = compute_embeddings(dataset, indices, params.bridge, model_cfg.bridge, mask);

    std::vector<int> emotion_labels;
    std::vector<CognitionLabelSet> cognition_labels;
    for (std::size_t i : indices) {
        emotion_labels.push_back(static_cast<int>(dataset.samples[i].emotion));
        cognition_labels.push_back(dataset.samples[i].cognition);
    }
    const SeparabilityReport rep = embedding_separability(he, emotion_labels);
    const auto rho = jaccard_similarity_correlation(hc, cognition_labels);

    nlohmann::json j;
    j["schema"] = 1;
    j["split"] = split;
    j["n"] = indices.size();
    j["emotion"] = {{"intra_cos", rep.intra_cosine},
                    {"inter_cos", rep.inter_cosine},
                    {"margin", rep.margin},
                    {"silhouette", rep.silhouette}};
    if (rho.has_value()) j["cognition_spearman"] = *rho;
    else j["cognition_spearman"] = nullptr;
    write_json(out_path, j);
    std::printf("margin %.4f, silhouette %.4f, spearman %s\n", rep.margin, rep.silhouette,
                rho ? std::to_string(*rho).c_str() : "undefined");
    return kExitOk;
}

int cmd_eval_captions(const std::string& cand_path, const std::string& ref_path,
                      const std::string& out_path) {
    const auto cand_lines = read_lines(cand_path);
    const auto ref_lines = read_lines(ref_path);
    if (cand_lines.size() != ref_lines.size())
        throw ParseError("candidate and reference files differ in length (" +
                         std::to_string(cand_lines.size()) + " vs " +
                         std::to_string(ref_lines.size()) + ")");
    if (cand_lines.empty()) throw ParseError("'" + cand_path + "': no caption lines");

    std::vector<TokenizedPair> pairs;
    pairs.reserve(cand_lines.size());
    for (std::size_t i = 0; i < cand_lines.size(); ++i)
        pairs.push_back({tokenize_caption(cand_lines[i]), {tokenize_caption(ref_lines[i])}});

    double rouge_sum = 0.0;
    for (const auto& p : pairs) rouge_sum += rouge_l(p);
    const CiderResult cd = cider(pairs);

    nlohmann::json j;
    j["schema"] = 1;
    j["bleu1"] = corpus_bleu(pairs, 1);
    j["bleu2"] = corpus_bleu(pairs, 2);
    j["bleu4"] = corpus_bleu(pairs, 4);
    j["rougeL"] = rouge_sum / static_cast<double>(pairs.size());
    j["cider"] = cd.mean; // unscaled [0,1] tf-idf cosine
    j["n_pairs"] = pairs.size();
    write_json(out_path, j);
    std::printf("bleu1 %.4f bleu2 %.4f bleu4 %.4f rougeL %.4f cider %.4f over %zu pairs\n",
                j["bleu1"].get<double>(), j["bleu2"].get<double>(), j["bleu4"].get<double>(),
                j["rougeL"].get<double>(), j["cider"].get<double>(), pairs.size());
    return kExitOk;
}

int cmd_eval_stats(const std::string& table_path, const std::string& out_path) {
    const GroupLabelTable table = load_group_table_csv(table_path);
    const GroupProportions props = group_proportions(table);
    nlohmann::json j;
    j["schema"] = 1;
    for (const auto& [group, means] : props.means) {
        nlohmann::json g;
        for (std::size_t k = 0; k < 5; ++k) g[kFlagNames[k]] = means[k];
        g["subjects"] = props.subject_counts.at(group);
        j["groups"][subject_group_name(group)] = std::move(g);
    }
    write_json(out_path, j);
    std::printf("group statistics written to %s\n", out_path.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const CommonOpts& common, const std::string& ckpt, const std::string& data_dir,
                 const std::string& split, const std::string& out_cand,
                 const std::string& out_ref, std::size_t max_new) {
    RunConfig run = common.build();
    run.validate();
    const ModelConfig model_cfg = run.model_config();
    const ModalityMask mask = ModalityMask::from_string(run.modalities);
    const Vocab vocab = caption_template_vocab();
    const auto prompt = vocab.encode(run.prompt_tokens());

    const Dataset dataset = load_dataset(data_dir);
    Rng rng(0);
    ModelParams params = ModelParams::init(model_cfg, rng);
    load_checkpoint_into(ckpt, checkpoint_sections(params));
    const DecoderParams frozen = params.decoder.frozen_view();

    const auto indices = dataset.split_indices(split_from_string(split));
    if (indices.empty()) throw ContractError("generate: split '" + split + "' is empty");

    std::ofstream cand_out(out_cand), ref_out(out_ref);
    if (!cand_out) throw IoError("cannot write '" + out_cand + "'");
    if (!ref_out) throw IoError("cannot write '" + out_ref + "'");
    for (std::size_t i : indices) {
        const auto& sample = dataset.samples[i];
        const BridgeEmbeddings emb =
            bridge_forward(sample.features, params.bridge, model_cfg.bridge, mask);
        const auto ids = greedy_decode(emb.emotion, emb.cognition, prompt, frozen, params.prefix,
                                       model_cfg.decoder, max_new);
        const auto tokens = vocab.decode(ids);
        for (std::size_t t = 0; t < tokens.size(); ++t)
            cand_out << (t ? " " : "") << tokens[t];
        cand_out << '\n';
        for (std::size_t t = 0; t < sample.caption.size(); ++t)
            ref_out << (t ? " " : "") << sample.caption[t];
        ref_out << '\n';
    }
    if (!cand_out || !ref_out) throw IoError("write failed while generating captions");
    std::printf("generated %zu captions from split '%s'\n", indices.size(), split.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(double tolerance, std::uint64_t seed) {
    // Note: tolerances much below 1e-5 will flag the nonlinear ops; central
    // differences themselves carry O(h^2) truncation error.
    const auto cases = standard_grad_checks(seed);
    bool all_ok = true;
    for (const auto& c : cases) {
        const double err = c.run();
        const bool ok = err < tolerance;
        all_ok = all_ok && ok;
        std::printf("%-28s max_rel_err %.3e  %s\n", c.name.c_str(), err, ok ? "PASS" : "FAIL");
    }
    std::printf("gradcheck: %s (tolerance %.1e)\n", all_ok ? "all passed" : "FAILURES", tolerance);
    return all_ok ? kExitOk : kExitCheckFailure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ecmc: dual-stream contrastive multi-modal captioning, desk scale"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    CommonOpts gen_common;
    gen_common.install(gen);
    std::string gen_out, gen_format = "ecmf";
    std::uint64_t gen_seed = 0;
    std::optional<std::size_t> gen_n, gen_n_val, gen_n_test;
    std::optional<double> gen_neg_rate, gen_noise, gen_rate_scale;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "generation seed")->required();
    gen->add_option("--n", gen_n, "training samples (alias for n_train)");
    gen->add_option("--n-val", gen_n_val, "validation samples");
    gen->add_option("--n-test", gen_n_test, "test samples");
    gen->add_option("--neg-rate", gen_neg_rate, "negative-emotion prior");
    gen->add_option("--noise-std", gen_noise, "feature noise level");
    gen->add_option("--rate-scale", gen_rate_scale, "cognition prior multiplier");
    gen->add_option("--format", gen_format, "matrix file format: ecmf or csv")
        ->check(CLI::IsMember({"ecmf", "csv"}));

    // train
    auto* train = app.add_subcommand("train", "run one training stage");
    CommonOpts train_common;
    train_common.install(train);
    std::string train_stage, train_data, train_out, train_ckpt_in, train_decoder_ckpt;
    std::string train_modalities, train_preset;
    std::uint64_t train_seed = 0;
    std::optional<std::size_t> train_epochs, train_batch;
    std::optional<double> train_lr;
    train->add_option("--stage", train_stage, "decoder, 1 or 2")->required();
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--seed", train_seed, "training seed")->required();
    train->add_option("--ckpt-in", train_ckpt_in, "checkpoint to start from");
    train->add_option("--decoder-ckpt", train_decoder_ckpt,
                      "pretrained decoder checkpoint (stage 2)");
    train->add_option("--modalities", train_modalities, "subset of vat for ablations");
    train->add_option("--preset", train_preset, "desk or paper optimizer preset");
    train->add_option("--epochs", train_epochs, "override epoch count");
    train->add_option("--batch-size", train_batch, "override batch size");
    train->add_option("--lr", train_lr, "override learning rate");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluation reports");
    eval->require_subcommand(1);
    auto* eval_emb = eval->add_subcommand("embeddings", "embedding-space diagnostics");
    CommonOpts emb_common;
    emb_common.install(eval_emb);
    std::string emb_ckpt, emb_data, emb_split = "test", emb_out, emb_modalities;
    eval_emb->add_option("--ckpt", emb_ckpt, "model checkpoint")->required();
    eval_emb->add_option("--data", emb_data, "dataset directory")->required();
    eval_emb->add_option("--split", emb_split, "train, val or test");
    eval_emb->add_option("--out", emb_out, "output JSON path")->required();
    eval_emb->add_option("--modalities", emb_modalities, "subset of vat");

    auto* eval_cap = eval->add_subcommand("captions", "caption quality metrics");
    std::string cap_cand, cap_ref, cap_out;
    eval_cap->add_option("--cand", cap_cand, "candidate captions, one per line")->required();
    eval_cap->add_option("--ref", cap_ref, "reference captions, aligned")->required();
    eval_cap->add_option("--out", cap_out, "output JSON path")->required();

    auto* eval_stats = eval->add_subcommand("stats", "per-group label statistics");
    std::string stats_table, stats_out;
    eval_stats->add_option("--table", stats_table, "utterance flag table CSV")->required();
    eval_stats->add_option("--out", stats_out, "output JSON path")->required();

    // generate
    auto* generate = app.add_subcommand("generate", "greedy-decode captions for a split");
    CommonOpts gen_cap_common;
    gen_cap_common.install(generate);
    std::string g_ckpt, g_data, g_split = "test", g_cand, g_ref, g_modalities;
    std::size_t g_max_new = 24;
    generate->add_option("--ckpt", g_ckpt, "model checkpoint")->required();
    generate->add_option("--data", g_data, "dataset directory")->required();
    generate->add_option("--split", g_split, "train, val or test");
    generate->add_option("--out-cand", g_cand, "generated captions file")->required();
    generate->add_option("--out-ref", g_ref, "gold captions file")->required();
    generate->add_option("--max-new", g_max_new, "max generated tokens per caption");
    generate->add_option("--modalities", g_modalities, "subset of vat");

    // gradcheck
    auto* gradcheck = app.add_subcommand(
        "gradcheck", "finite-difference checks over every differentiable op");
    double gc_tol = 1e-4;
    std::uint64_t gc_seed = 1234;
    gradcheck->add_option("--tol", gc_tol,
                          "relative-error tolerance (values below ~1e-5 are expected to flag "
                          "nonlinear ops; central differences have O(h^2) truncation error)");
    gradcheck->add_option("--seed", gc_seed, "seed for the check inputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (app.got_subcommand(gen)) {
            if (gen_n) gen_common.sets.push_back("n_train=" + std::to_string(*gen_n));
            if (gen_n_val) gen_common.sets.push_back("n_val=" + std::to_string(*gen_n_val));
            if (gen_n_test) gen_common.sets.push_back("n_test=" + std::to_string(*gen_n_test));
            if (gen_neg_rate)
                gen_common.sets.push_back("negative_rate=" + std::to_string(*gen_neg_rate));
            if (gen_noise) gen_common.sets.push_back("noise_std=" + std::to_string(*gen_noise));
            if (gen_rate_scale)
                gen_common.sets.push_back("cognition_rate_scale=" +
                                          std::to_string(*gen_rate_scale));
            return cmd_gen_data(gen_common, gen_out, gen_seed, gen_format);
        }
        if (app.got_subcommand(train)) {
            if (!train_preset.empty()) train_common.sets.insert(train_common.sets.begin(),
                                                                "preset=" + train_preset);
            if (!train_modalities.empty())
                train_common.sets.push_back("modalities=" + train_modalities);
            if (train_epochs) train_common.sets.push_back("epochs=" + std::to_string(*train_epochs));
            if (train_batch)
                train_common.sets.push_back("batch_size=" + std::to_string(*train_batch));
            if (train_lr) {
                char buf[40];
                std::snprintf(buf, sizeof buf, "lr=%.17g", *train_lr);
                train_common.sets.push_back(buf);
            }
            return cmd_train(train_common, train_stage, train_data, train_out, train_seed,
                             train_ckpt_in, train_decoder_ckpt);
        }
        if (app.got_subcommand(eval)) {
            if (eval->got_subcommand(eval_emb)) {
                if (!emb_modalities.empty())
                    emb_common.sets.push_back("modalities=" + emb_modalities);
                return cmd_eval_embeddings(emb_common, emb_ckpt, emb_data, emb_split, emb_out);
            }
            if (eval->got_subcommand(eval_cap))
                return cmd_eval_captions(cap_cand, cap_ref, cap_out);
            if (eval->got_subcommand(eval_stats))
                return cmd_eval_stats(stats_table, stats_out);
        }
        if (app.got_subcommand(generate)) {
            if (!g_modalities.empty())
                gen_cap_common.sets.push_back("modalities=" + g_modalities);
            return cmd_generate(gen_cap_common, g_ckpt, g_data, g_split, g_cand, g_ref, g_max_new);
        }
        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(gc_tol, gc_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return kExitIo;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kExitDivergence;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitConfig;
}
