#include "pointseg/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "pointseg/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pointseg {

std::string ExperimentConfig::to_json() const {
    json j;
    j["dataset"] = dataset_path;
    j["eval_dataset"] = eval_dataset_path;
    j["output_dir"] = output_dir;
    j["fraction"] = fraction;
    j["point_mode"] = point_mode;
    j["pseudo_mode"] = pseudo_mode;
    j["tau"] = tau;
    j["use_refiner"] = use_refiner;
    j["iterative_rounds"] = iterative_rounds;
    j["eval_tau"] = eval_tau;
    j["seed"] = seed;
    j["workers"] = workers;
    j["net"] = json::parse(net.to_json());
    j["refine"] = json::parse(refine.to_json());
    return j.dump(1);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("experiment config: ") + e.what());
    }
    ExperimentConfig c;
    auto get = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j[key].get<std::decay_t<decltype(out)>>();
    };
    get("dataset", c.dataset_path);
    get("eval_dataset", c.eval_dataset_path);
    get("output_dir", c.output_dir);
    get("fraction", c.fraction);
    get("point_mode", c.point_mode);
    get("pseudo_mode", c.pseudo_mode);
    get("tau", c.tau);
    get("use_refiner", c.use_refiner);
    get("iterative_rounds", c.iterative_rounds);
    get("eval_tau", c.eval_tau);
    get("seed", c.seed);
    get("workers", c.workers);
    if (j.contains("net")) c.net = NetConfig::from_json(j["net"].dump());
    if (j.contains("refine")) c.refine = RefineConfig::from_json(j["refine"].dump());
    if (c.iterative_rounds < 0) throw ConfigError("iterative_rounds must be >= 0");
    if (c.point_mode != "centroid" && c.point_mode != "random")
        throw ConfigError("unknown point mode: " + c.point_mode);
    if (c.pseudo_mode != "point_guided" && c.pseudo_mode != "threshold" &&
        c.pseudo_mode != "image_level")
        throw ConfigError("unknown pseudo mode: " + c.pseudo_mode);
    return c;
}

std::string ExperimentReport::to_json() const {
    json j;
    j["stages"] = stages;
    j["rounds"] = rounds;
    return j.dump(1);
}

std::string ExperimentReport::summary_table() const {
    std::string out;
    char line[160];
    for (const auto& [stage, metrics] : stages) {
        std::snprintf(line, sizeof(line), "%-24s", stage.c_str());
        out += line;
        for (const auto& [k, v] : metrics) {
            std::snprintf(line, sizeof(line), " %s=%.4f", k.c_str(), v);
            out += line;
        }
        out += "\n";
    }
    for (size_t r = 0; r < rounds.size(); ++r) {
        std::snprintf(line, sizeof(line), "round[%zu]%-16s", r, "");
        out += line;
        for (const auto& [k, v] : rounds[r]) {
            std::snprintf(line, sizeof(line), " %s=%.4f", k.c_str(), v);
            out += line;
        }
        out += "\n";
    }
    return out;
}

void ExperimentReport::write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open for writing: " + path);
    f << to_json() << "\n";
}

ExperimentReport ExperimentReport::read(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("report: ") + e.what());
    }
    ExperimentReport r;
    r.stages = j.at("stages")
                   .get<std::map<std::string, std::map<std::string, double>>>();
    r.rounds = j.at("rounds").get<std::vector<std::map<std::string, double>>>();
    return r;
}

uint64_t stage_seed(uint64_t base, const std::string& stage) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : stage) {
        h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ULL;
    }
    return Rng::mix(base, h);
}

std::vector<std::pair<const ImageRecord*, std::vector<PointLabel>>> derive_points(
    const Dataset& dataset, const DatasetSplit& split, const std::string& point_mode,
    uint64_t seed) {
    std::vector<std::pair<const ImageRecord*, std::vector<PointLabel>>> out;
    for (const auto& rec : dataset.images) {
        if (!split.point_ids.count(rec.id)) continue;
        std::vector<PointLabel> pts;
        for (const InstanceAnnotation* a : dataset.annotations_of(rec.id))
            pts.push_back(point_mode == "random" ? random_point(*a, seed)
                                                 : centroid_point(*a));
        out.emplace_back(&rec, std::move(pts));
    }
    return out;
}

PseudoLabelSet refine_pseudo_set(const RefineNet& refiner, const Dataset& dataset,
                                 const PseudoLabelSet& pseudo) {
    PseudoLabelSet out;
    out.missing_image_warnings = pseudo.missing_image_warnings;
    for (const auto& [iid, anns] : pseudo.by_image) {
        const ImageRecord& rec = dataset.image_by_id(iid);
        std::vector<InstanceAnnotation>& dst = out.by_image[iid];
        for (const auto& a : anns) {
            if (!a.guiding_point) {
                dst.push_back(a);  // nothing to guide the refiner with
                continue;
            }
            InstanceAnnotation r =
                refine(refiner, rec.pixels, a.decode(), *a.guiding_point, iid, a.id);
            r.score = a.score;
            r.source_level = a.source_level;
            dst.push_back(std::move(r));
        }
    }
    return out;
}

std::vector<TrainingExample> student_examples(const Dataset& dataset,
                                              const DatasetSplit& split,
                                              const PseudoLabelSet& pseudo) {
    std::vector<TrainingExample> out;
    for (const auto& rec : dataset.images) {
        TrainingExample ex;
        ex.image = &rec.pixels;
        ex.image_id = rec.id;
        if (split.full_ids.count(rec.id)) {
            ex.annotations = dataset.annotations_of(rec.id);
        } else if (split.point_ids.count(rec.id)) {
            auto it = pseudo.by_image.find(rec.id);
            if (it == pseudo.by_image.end()) continue;
            for (const auto& a : it->second)
                if (!a.empty_flag && a.area >= 1) ex.annotations.push_back(&a);
        } else {
            continue;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<InstanceAnnotation> infer_dataset(const SegNet& net, const Dataset& dataset,
                                              double tau) {
    std::vector<std::vector<InstanceAnnotation>> per_image(dataset.images.size());
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < dataset.images.size(); ++i) {
        const auto& rec = dataset.images[i];
        per_image[i] = net.infer(rec.pixels, rec.id, tau);
    }
    std::vector<InstanceAnnotation> out;
    int64_t next_id = 1;
    for (auto& v : per_image)
        for (auto& a : v) {
            a.id = next_id++;
            out.push_back(std::move(a));
        }
    return out;
}

namespace {

Dataset pseudo_document(const Dataset& src, const PseudoLabelSet& pseudo) {
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

struct Runner {
    const ExperimentConfig& cfg;
    ExperimentReport report;
    fs::path out;
    std::string current_stage;

    explicit Runner(const ExperimentConfig& c) : cfg(c), out(c.output_dir) {}

    void persist_partial() {
        ExperimentReport partial = report;
        partial.stages["aborted"] = {{"failed", 1.0}};
        partial.write((out / "reports" / "report.json").string());
    }

    template <typename F>
    auto stage(const std::string& name, F&& fn) {
        current_stage = name;
        try {
            return fn();
        } catch (const std::exception& e) {
            try {
                persist_partial();
            } catch (...) {
            }
            throw ConfigError("stage `" + name + "` failed: " + e.what());
        }
    }
};

std::map<std::string, double> ap_metrics(const APReport& r) {
    return {{"ap", r.ap}, {"ap50", r.ap50}, {"ap75", r.ap75}, {"ar100", r.ar100}};
}

}  // namespace

ExperimentReport run_iterative(const ExperimentConfig& cfg) {
    Runner run(cfg);
    fs::create_directories(run.out / "weights");
    fs::create_directories(run.out / "pseudo");
    fs::create_directories(run.out / "reports");
    {
        std::ofstream echo(run.out / "config.echo");
        echo << cfg.to_json() << "\n";
    }

    const Dataset dataset = run.stage("load", [&] { return read_dataset(cfg.dataset_path); });
    Dataset eval_set;
    if (!cfg.eval_dataset_path.empty())
        eval_set = run.stage("load_eval", [&] { return read_dataset(cfg.eval_dataset_path); });

    const DatasetSplit split = run.stage("split", [&] {
        auto s = split_dataset(dataset, cfg.fraction, cfg.seed);
        write_split(s, (run.out / "split.json").string());
        return s;
    });
    run.report.stages["split"] = {
        {"full_images", static_cast<double>(split.full_ids.size())},
        {"point_images", static_cast<double>(split.point_ids.size())}};

    const auto point_images = derive_points(dataset, split, cfg.point_mode,
                                            stage_seed(cfg.seed, "points"));

    // Teacher: the full-labels-only baseline.
    NetConfig teacher_cfg = cfg.net;
    teacher_cfg.seed = stage_seed(cfg.seed, "teacher");
    TrainLog teacher_log;
    const SegNet teacher = run.stage("train_teacher", [&] {
        SegNet net = train_teacher(dataset, split.full_ids, teacher_cfg, &teacher_log);
        net.save((run.out / "weights" / "teacher.ntar").string());
        return net;
    });
    run.report.stages["teacher"] = {
        {"final_loss", teacher_log.loss_curve.empty() ? 0.0 : teacher_log.loss_curve.back()},
        {"steps", static_cast<double>(teacher_log.loss_curve.size())}};
    if (!eval_set.images.empty()) {
        const auto preds = infer_dataset(teacher, eval_set, cfg.eval_tau);
        const APReport r = evaluate(preds, eval_set.annotations);
        run.report.stages["teacher_eval"] = ap_metrics(r);
    }

    RefineConfig refine_cfg = cfg.refine;
    refine_cfg.num_classes = cfg.net.num_classes;
    refine_cfg.seed = stage_seed(cfg.seed, "refiner");
    refine_cfg.point_mode = cfg.point_mode;
    std::unique_ptr<RefineNet> refiner;
    if (cfg.use_refiner) {
        refiner = run.stage("train_refiner", [&] {
            TrainLog log;
            auto net = std::make_unique<RefineNet>(
                train_refiner(teacher, dataset, split.full_ids, refine_cfg, &log));
            net->save((run.out / "weights" / "refiner.ntar").string());
            run.report.stages["refiner"] = {
                {"final_loss", log.loss_curve.empty() ? 0.0 : log.loss_curve.back()},
                {"steps", static_cast<double>(log.loss_curve.size())}};
            return net;
        });
    }

    const SegNet* generator = &teacher;
    std::unique_ptr<SegNet> student;
    for (int round = 0; round <= cfg.iterative_rounds; ++round) {
        std::map<std::string, double> round_metrics;
        PseudoLabelSet pseudo = run.stage("pseudo_gen", [&] {
            if (cfg.pseudo_mode == "point_guided")
                return generate_point_guided(*generator, point_images);
            std::vector<const ImageRecord*> recs;
            for (const auto& [rec, pts] : point_images) recs.push_back(rec);
            PseudoLabelSet p = generate_threshold(*generator, recs, cfg.tau);
            if (cfg.pseudo_mode == "image_level") {
                std::map<int64_t, std::set<int>> cats;
                for (const auto& [rec, pts] : point_images)
                    for (const InstanceAnnotation* a : dataset.annotations_of(rec->id))
                        cats[rec->id].insert(a->category);
                p = filter_by_image_labels(p, cats);
            }
            return p;
        });
        if (cfg.use_refiner && cfg.pseudo_mode == "point_guided")
            pseudo = run.stage("refine_pseudo",
                               [&] { return refine_pseudo_set(*refiner, dataset, pseudo); });

        run.stage("write_pseudo", [&] {
            write_dataset(pseudo_document(dataset, pseudo),
                          (run.out / "pseudo" /
                           ("pseudo_round" + std::to_string(round) + ".json"))
                              .string());
            return 0;
        });
        round_metrics["pseudo_count"] = static_cast<double>(pseudo.total());
        if (!point_images.empty()) {
            const APReport q = pseudo_quality(pseudo, dataset);
            round_metrics["pseudo_ap"] = q.ap;
            round_metrics["pseudo_ap50"] = q.ap50;
            round_metrics["pseudo_ar100"] = q.ar100;
        }

        NetConfig student_cfg = cfg.net;
        student_cfg.seed = stage_seed(cfg.seed, "student" + std::to_string(round));
        TrainLog student_log;
        student = run.stage("train_student", [&] {
            auto examples = student_examples(dataset, split, pseudo);
            auto net = std::make_unique<SegNet>(train_network(examples, student_cfg,
                                                              &student_log));
            net->save((run.out / "weights" /
                       ("student_round" + std::to_string(round) + ".ntar"))
                          .string());
            return net;
        });
        round_metrics["student_final_loss"] =
            student_log.loss_curve.empty() ? 0.0 : student_log.loss_curve.back();
        if (!eval_set.images.empty()) {
            const auto preds = infer_dataset(*student, eval_set, cfg.eval_tau);
            const APReport r = evaluate(preds, eval_set.annotations);
            round_metrics["student_ap"] = r.ap;
            round_metrics["student_ap50"] = r.ap50;
            round_metrics["student_ap75"] = r.ap75;
            round_metrics["student_ar100"] = r.ar100;
        }
        run.report.rounds.push_back(std::move(round_metrics));
        generator = student.get();
    }

    // Final-round student doubles as the headline "student" stage.
    if (!run.report.rounds.empty()) {
        const auto& last = run.report.rounds.back();
        std::map<std::string, double> stage;
        for (const std::string k : {"student_ap", "student_ap50", "student_ap75",
                                    "student_ar100"})
            if (last.count(k)) stage[k.substr(8)] = last.at(k);
        if (!stage.empty()) run.report.stages["student_eval"] = stage;
    }
    run.report.write((run.out / "reports" / "report.json").string());
    {
        std::ofstream table(run.out / "reports" / "summary.txt");
        table << run.report.summary_table();
    }
    return run.report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    ExperimentConfig plain = cfg;
    plain.iterative_rounds = 0;
    return run_iterative(plain);
}

}  // namespace pointseg
