#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "pointseg/budget.hpp"
#include "pointseg/errors.hpp"
#include "pointseg/pipeline.hpp"
#include "pointseg/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pointseg;

namespace {

// Layering: config file < POINTSEG_* environment < explicit flags. Flags are
// applied last by CLI11 itself; the environment pass happens in between.
std::string env_or(const std::string& key, const std::string& fallback) {
    const char* v = std::getenv(("POINTSEG_" + key).c_str());
    return v ? std::string(v) : fallback;
}

void apply_env_overrides(json& cfg) {
    static const std::map<std::string, std::string> keys = {
        {"DATASET", "dataset"},         {"EVAL_DATASET", "eval_dataset"},
        {"OUTPUT_DIR", "output_dir"},   {"FRACTION", "fraction"},
        {"POINT_MODE", "point_mode"},   {"PSEUDO_MODE", "pseudo_mode"},
        {"TAU", "tau"},                 {"USE_REFINER", "use_refiner"},
        {"ITERATIVE_ROUNDS", "iterative_rounds"},
        {"SEED", "seed"},               {"WORKERS", "workers"},
        {"EVAL_TAU", "eval_tau"},
    };
    for (const auto& [env, key] : keys) {
        const char* v = std::getenv(("POINTSEG_" + env).c_str());
        if (!v) continue;
        const std::string s(v);
        if (key == "dataset" || key == "eval_dataset" || key == "output_dir" ||
            key == "point_mode" || key == "pseudo_mode") {
            cfg[key] = s;
        } else if (key == "use_refiner") {
            cfg[key] = (s == "1" || s == "true" || s == "on");
        } else if (key == "seed" || key == "workers" || key == "iterative_rounds") {
            cfg[key] = std::stoll(s);
        } else {
            cfg[key] = std::stod(s);
        }
    }
}

void set_workers(int workers) {
#ifdef _OPENMP
    if (workers > 0) omp_set_num_threads(workers);
#else
    (void)workers;
#endif
}

void echo_config(const std::string& text, const std::string& near_output) {
    std::ofstream f(near_output + ".config.echo");
    f << text << "\n";
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Final stdout line of every successful command: one JSON object.
void print_summary(const json& j) { std::cout << j.dump() << std::endl; }

LabelMix parse_mix(const std::string& text, int64_t images) {
    LabelMix mix;
    mix.n_images = images;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos)
            throw ConfigError("mix entry `" + part + "` is not name=fraction");
        mix.parts.emplace_back(label_type_from_string(part.substr(0, eq)),
                               std::stod(part.substr(eq + 1)));
    }
    if (mix.parts.empty()) throw ConfigError("empty label mix");
    return mix;
}

PseudoLabelSet pseudo_from_dataset(const Dataset& doc) {
    PseudoLabelSet set;
    for (const auto& im : doc.images) set.by_image[im.id];
    for (const auto& a : doc.annotations) set.by_image[a.image_id].push_back(a);
    return set;
}

Dataset pseudo_to_document(const Dataset& src, const PseudoLabelSet& pseudo) {
    Dataset doc;
    doc.categories = src.categories;
    int64_t next_id = 1;
    for (const auto& [iid, anns] : pseudo.by_image) {
        const ImageRecord& rec = src.image_by_id(iid);
        ImageRecord meta;
        meta.id = rec.id;
        meta.width = rec.width;
        meta.height = rec.height;
        meta.file_name = rec.file_name;
        doc.images.push_back(std::move(meta));
        for (const auto& a : anns) {
            InstanceAnnotation copy = a;
            copy.id = next_id++;
            doc.annotations.push_back(std::move(copy));
        }
    }
    return doc;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Point-supervised instance segmentation workbench"};
    app.require_subcommand(1);
    int workers = static_cast<int>(std::stoll(env_or("WORKERS", "0")));
    app.add_option("--workers", workers, "worker threads for intra-stage fan-out");

    // ---- synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic shapes dataset");
    std::string synth_out = "data";
    SynthSpec spec;
    uint64_t synth_seed = std::stoull(env_or("SEED", "0"));
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--images", spec.n_images, "number of images");
    synth->add_option("--width", spec.width);
    synth->add_option("--height", spec.height);
    synth->add_option("--min-instances", spec.min_instances);
    synth->add_option("--max-instances", spec.max_instances);
    synth->add_option("--min-size", spec.min_size);
    synth->add_option("--max-size", spec.max_size);
    synth->add_option("--overlap", spec.max_overlap_iou, "max pairwise mask IoU");
    synth->add_option("--seed", synth_seed);

    // ---- split
    auto* split_cmd = app.add_subcommand("split", "split a dataset into full/point ids");
    std::string split_dataset_path, split_out = "split.json";
    double split_fraction = 0.1;
    uint64_t split_seed = std::stoull(env_or("SEED", "0"));
    split_cmd->add_option("--dataset", split_dataset_path)->required();
    split_cmd->add_option("--fraction", split_fraction, "fully-labeled fraction in (0,1]")
        ->check(CLI::Range(1e-9, 1.0));
    split_cmd->add_option("--seed", split_seed);
    split_cmd->add_option("--out", split_out);

    // ---- budget
    auto* budget_cmd = app.add_subcommand("budget", "annotation budget for a label mix");
    std::string mix_text = "full=1.0";
    int64_t budget_images = 118287;
    budget_cmd->add_option("--mix", mix_text, "e.g. full=0.05,point=0.95");
    budget_cmd->add_option("--images", budget_images, "dataset size");

    // ---- train-teacher / train-student share most options
    std::string ds_path, split_path, weights_out = "teacher.ntar", net_config_path;
    std::string pseudo_path;
    uint64_t train_seed = std::stoull(env_or("SEED", "1"));
    int train_steps = -1;
    double train_lr = -1.0;
    auto add_train_opts = [&](CLI::App* cmd) {
        cmd->add_option("--dataset", ds_path)->required();
        cmd->add_option("--split", split_path)->required();
        cmd->add_option("--out", weights_out);
        cmd->add_option("--net-config", net_config_path, "NetConfig json file");
        cmd->add_option("--seed", train_seed);
        cmd->add_option("--steps", train_steps);
        cmd->add_option("--lr", train_lr);
    };
    auto* teach = app.add_subcommand("train-teacher", "train the teacher on full labels");
    add_train_opts(teach);
    auto* stud = app.add_subcommand("train-student", "train the student on full+pseudo");
    add_train_opts(stud);
    stud->add_option("--pseudo", pseudo_path, "pseudo-label document")->required();

    // ---- pseudo-gen
    auto* pgen = app.add_subcommand("pseudo-gen", "generate pseudo labels");
    std::string pg_dataset, pg_split, pg_weights, pg_out = "pseudo.json";
    std::string pg_mode = "point_guided", pg_point_mode = "centroid", pg_refiner;
    double pg_tau = 0.3;
    uint64_t pg_seed = std::stoull(env_or("SEED", "1"));
    pgen->add_option("--dataset", pg_dataset)->required();
    pgen->add_option("--split", pg_split)->required();
    pgen->add_option("--weights", pg_weights)->required();
    pgen->add_option("--mode", pg_mode)
        ->check(CLI::IsMember({"point_guided", "threshold", "image_level"}));
    pgen->add_option("--tau", pg_tau)->check(CLI::Range(0.0, 1.0));
    pgen->add_option("--point-mode", pg_point_mode)
        ->check(CLI::IsMember({"centroid", "random"}));
    pgen->add_option("--refiner", pg_refiner, "apply this refiner to the masks");
    pgen->add_option("--out", pg_out);
    pgen->add_option("--seed", pg_seed);

    // ---- train-refiner
    auto* tref = app.add_subcommand("train-refiner", "train the mask refiner");
    std::string tr_dataset, tr_split, tr_teacher, tr_out = "refiner.ntar", tr_cfg;
    uint64_t tr_seed = std::stoull(env_or("SEED", "1"));
    int tr_steps = -1;
    double tr_lr = -1.0;
    tref->add_option("--dataset", tr_dataset)->required();
    tref->add_option("--split", tr_split)->required();
    tref->add_option("--teacher", tr_teacher)->required();
    tref->add_option("--out", tr_out);
    tref->add_option("--refine-config", tr_cfg, "RefineConfig json file");
    tref->add_option("--seed", tr_seed);
    tref->add_option("--steps", tr_steps);
    tref->add_option("--lr", tr_lr);

    // ---- refine
    auto* ref = app.add_subcommand("refine", "refine a pseudo-label document");
    std::string rf_dataset, rf_pseudo, rf_refiner, rf_out = "refined.json";
    ref->add_option("--dataset", rf_dataset)->required();
    ref->add_option("--pseudo", rf_pseudo)->required();
    ref->add_option("--refiner", rf_refiner)->required();
    ref->add_option("--out", rf_out);

    // ---- eval
    auto* ev = app.add_subcommand("eval", "COCO-style mask AP of predictions vs GT");
    std::string ev_gt, ev_pred, ev_out;
    ev->add_option("--gt", ev_gt)->required();
    ev->add_option("--pred", ev_pred)->required();
    ev->add_option("--out", ev_out, "write the report json here");

    // ---- run
    auto* run = app.add_subcommand("run", "full two-step experiment from a config");
    std::string run_config, run_out, run_dataset, run_eval_dataset;
    double run_fraction = -1.0, run_tau = -1.0;
    int run_rounds = -1;
    std::string run_pseudo_mode, run_point_mode;
    int run_refiner_flag = -1;
    uint64_t run_seed = 0;
    bool run_seed_set = false;
    run->add_option("--config", run_config, "experiment json");
    run->add_option("--out", run_out, "output directory");
    run->add_option("--dataset", run_dataset);
    run->add_option("--eval-dataset", run_eval_dataset);
    run->add_option("--fraction", run_fraction);
    run->add_option("--tau", run_tau);
    run->add_option("--rounds", run_rounds, "iterative rounds");
    run->add_option("--pseudo-mode", run_pseudo_mode)
        ->check(CLI::IsMember({"point_guided", "threshold", "image_level"}));
    run->add_option("--point-mode", run_point_mode)
        ->check(CLI::IsMember({"centroid", "random"}));
    run->add_option("--refiner", run_refiner_flag, "1/0 toggle for the refiner");
    run->add_option("--seed", run_seed)->each([&](const std::string&) { run_seed_set = true; });

    // ---- report
    auto* rep = app.add_subcommand("report", "print a run report as a table");
    std::string rep_path;
    rep->add_option("--report", rep_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    set_workers(workers);

    if (synth->parsed()) {
        spec.seed = synth_seed;
        const SynthResult result = generate(spec);
        fs::create_directories(synth_out);
        const std::string path = (fs::path(synth_out) / "dataset.json").string();
        write_dataset(result.dataset, path);
        print_summary({{"command", "synth"},
                       {"path", path},
                       {"images", result.dataset.images.size()},
                       {"annotations", result.dataset.annotations.size()},
                       {"placement_failures", result.placement_failures}});
    } else if (split_cmd->parsed()) {
        const Dataset ds = read_dataset(split_dataset_path);
        const DatasetSplit s = split_dataset(ds, split_fraction, split_seed);
        write_split(s, split_out);
        print_summary({{"command", "split"},
                       {"path", split_out},
                       {"full_images", s.full_ids.size()},
                       {"point_images", s.point_ids.size()}});
    } else if (budget_cmd->parsed()) {
        const BudgetModel model;
        const LabelMix mix = parse_mix(mix_text, budget_images);
        const double days = mix_budget_days(model, mix);
        std::printf("%-12s %10s %14s\n", "label", "fraction", "sec/img");
        json jmix = json::array();
        for (const auto& [type, fraction] : mix.parts) {
            std::printf("%-12s %10.4f %14.2f\n", to_string(type).c_str(), fraction,
                        per_image_cost(model, type));
            jmix.push_back({{"label", to_string(type)},
                            {"fraction", fraction},
                            {"sec_per_img", per_image_cost(model, type)}});
        }
        std::printf("%-12s %10lld %14.1f days\n", "total",
                    static_cast<long long>(budget_images), days);
        print_summary({{"command", "budget"}, {"days", days}, {"mix", jmix}});
    } else if (teach->parsed() || stud->parsed()) {
        const Dataset ds = read_dataset(ds_path);
        const DatasetSplit s = read_split(split_path);
        NetConfig cfg = net_config_path.empty() ? NetConfig{}
                                                : NetConfig::from_json(slurp(net_config_path));
        cfg.seed = train_seed;
        if (train_steps > 0) cfg.train_steps = train_steps;
        if (train_lr > 0) cfg.learning_rate = train_lr;
        TrainLog log;
        if (teach->parsed()) {
            const SegNet net = train_teacher(ds, s.full_ids, cfg, &log);
            net.save(weights_out);
        } else {
            const PseudoLabelSet pseudo = pseudo_from_dataset(read_dataset(pseudo_path));
            const SegNet net = train_network(student_examples(ds, s, pseudo), cfg, &log);
            net.save(weights_out);
        }
        echo_config(cfg.to_json(), weights_out);
        print_summary({{"command", teach->parsed() ? "train-teacher" : "train-student"},
                       {"weights", weights_out},
                       {"steps", log.loss_curve.size()},
                       {"final_loss", log.loss_curve.empty() ? 0.0 : log.loss_curve.back()}});
    } else if (pgen->parsed()) {
        const Dataset ds = read_dataset(pg_dataset);
        const DatasetSplit s = read_split(pg_split);
        const SegNet net = SegNet::load_from(pg_weights);
        const auto points = derive_points(ds, s, pg_point_mode, pg_seed);
        PseudoLabelSet pseudo;
        if (pg_mode == "point_guided") {
            pseudo = generate_point_guided(net, points);
        } else {
            std::vector<const ImageRecord*> recs;
            for (const auto& [rec, pts] : points) recs.push_back(rec);
            pseudo = generate_threshold(net, recs, pg_tau);
            if (pg_mode == "image_level") {
                std::map<int64_t, std::set<int>> cats;
                for (const auto& [rec, pts] : points)
                    for (const auto* a : ds.annotations_of(rec->id))
                        cats[rec->id].insert(a->category);
                pseudo = filter_by_image_labels(pseudo, cats);
            }
        }
        if (!pg_refiner.empty()) {
            const RefineNet refiner = RefineNet::load_from(pg_refiner);
            pseudo = refine_pseudo_set(refiner, ds, pseudo);
        }
        write_dataset(pseudo_to_document(ds, pseudo), pg_out);
        json summary{{"command", "pseudo-gen"},
                     {"path", pg_out},
                     {"mode", pg_mode},
                     {"annotations", pseudo.total()}};
        if (!pseudo.by_image.empty()) {
            const APReport q = pseudo_quality(pseudo, ds);
            summary["ap"] = q.ap;
            summary["ap50"] = q.ap50;
            summary["ar100"] = q.ar100;
        }
        print_summary(summary);
    } else if (tref->parsed()) {
        const Dataset ds = read_dataset(tr_dataset);
        const DatasetSplit s = read_split(tr_split);
        const SegNet teacher = SegNet::load_from(tr_teacher);
        RefineConfig cfg = tr_cfg.empty() ? RefineConfig{}
                                          : RefineConfig::from_json(slurp(tr_cfg));
        cfg.num_classes = teacher.config().num_classes;
        cfg.seed = tr_seed;
        if (tr_steps > 0) cfg.train_steps = tr_steps;
        if (tr_lr > 0) cfg.learning_rate = tr_lr;
        TrainLog log;
        const RefineNet refiner = train_refiner(teacher, ds, s.full_ids, cfg, &log);
        refiner.save(tr_out);
        echo_config(cfg.to_json(), tr_out);
        print_summary({{"command", "train-refiner"},
                       {"weights", tr_out},
                       {"final_loss", log.loss_curve.empty() ? 0.0 : log.loss_curve.back()}});
    } else if (ref->parsed()) {
        const Dataset ds = read_dataset(rf_dataset);
        const Dataset doc = read_dataset(rf_pseudo);
        const RefineNet refiner = RefineNet::load_from(rf_refiner);
        const PseudoLabelSet refined =
            refine_pseudo_set(refiner, ds, pseudo_from_dataset(doc));
        write_dataset(pseudo_to_document(ds, refined), rf_out);
        print_summary({{"command", "refine"},
                       {"path", rf_out},
                       {"annotations", refined.total()}});
    } else if (ev->parsed()) {
        const Dataset gt = read_dataset(ev_gt);
        const Dataset pred = read_dataset(ev_pred);
        const APReport r = evaluate(pred.annotations, gt.annotations);
        std::printf("%-10s %8s %8s %8s %8s\n", "", "AP", "AP50", "AP75", "AR100");
        std::printf("%-10s %8.4f %8.4f %8.4f %8.4f\n", "all", r.ap, r.ap50, r.ap75, r.ar100);
        for (const auto& [cat, ap] : r.per_category_ap)
            std::printf("cat %-6d %8.4f\n", cat, ap);
        json out{{"command", "eval"},
                 {"ap", r.ap},
                 {"ap50", r.ap50},
                 {"ap75", r.ap75},
                 {"ar100", r.ar100}};
        if (!ev_out.empty()) {
            std::ofstream f(ev_out);
            f << out.dump(1) << "\n";
            out["path"] = ev_out;
        }
        print_summary(out);
    } else if (run->parsed()) {
        json cfg_json = run_config.empty() ? json::object() : json::parse(slurp(run_config));
        apply_env_overrides(cfg_json);
        ExperimentConfig cfg = ExperimentConfig::from_json(cfg_json.dump());
        if (!run_dataset.empty()) cfg.dataset_path = run_dataset;
        if (!run_eval_dataset.empty()) cfg.eval_dataset_path = run_eval_dataset;
        if (!run_out.empty()) cfg.output_dir = run_out;
        if (run_fraction > 0) cfg.fraction = run_fraction;
        if (run_tau >= 0) cfg.tau = run_tau;
        if (run_rounds >= 0) cfg.iterative_rounds = run_rounds;
        if (!run_pseudo_mode.empty()) cfg.pseudo_mode = run_pseudo_mode;
        if (!run_point_mode.empty()) cfg.point_mode = run_point_mode;
        if (run_refiner_flag >= 0) cfg.use_refiner = run_refiner_flag != 0;
        if (run_seed_set) cfg.seed = run_seed;
        if (workers > 0) cfg.workers = workers;
        const ExperimentReport report = run_iterative(cfg);
        std::cout << report.summary_table();
        print_summary(
            {{"command", "run"},
             {"report", (fs::path(cfg.output_dir) / "reports" / "report.json").string()},
             {"rounds", report.rounds.size()}});
    } else if (rep->parsed()) {
        const ExperimentReport report = ExperimentReport::read(rep_path);
        std::cout << report.summary_table();
        print_summary({{"command", "report"}, {"path", rep_path}});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
