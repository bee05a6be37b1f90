#pragma once

#include <map>
#include <string>
#include <vector>

#include "pointseg/pseudo.hpp"
#include "pointseg/refine.hpp"
#include "pointseg/segnet.hpp"

namespace pointseg {

struct ExperimentConfig {
    std::string dataset_path;
    std::string eval_dataset_path;  // held-out set; empty = skip AP stages
    std::string output_dir = "out";
    double fraction = 0.1;
    std::string point_mode = "centroid";  // or "random"
    std::string pseudo_mode = "point_guided";  // threshold | image_level | point_guided
    double tau = 0.3;
    bool use_refiner = true;
    int iterative_rounds = 0;
    double eval_tau = 0.05;  // score floor when ranking student/teacher detections
    uint64_t seed = 7;
    int workers = 0;
    NetConfig net;
    RefineConfig refine;

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
};

struct ExperimentReport {
    std::map<std::string, std::map<std::string, double>> stages;
    std::vector<std::map<std::string, double>> rounds;

    std::string to_json() const;
    std::string summary_table() const;
    void write(const std::string& path) const;
    static ExperimentReport read(const std::string& path);
};

// Deterministic per-stage seed derivation, shared by the CLI stages and the
// end-to-end runner so both produce identical artifacts.
uint64_t stage_seed(uint64_t base, const std::string& stage);

// Derives point labels for the point-id images per the configured mode.
std::vector<std::pair<const ImageRecord*, std::vector<PointLabel>>> derive_points(
    const Dataset& dataset, const DatasetSplit& split, const std::string& point_mode,
    uint64_t seed);

// split -> teacher -> (refiner) -> pseudo (+refine) -> student -> eval.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// Iterative variant: each round's student regenerates the pseudo labels for
// the next round. iterative_rounds = 0 matches run_experiment exactly.
ExperimentReport run_iterative(const ExperimentConfig& cfg);

// Refine every pseudo annotation in place (guided by its stored point).
PseudoLabelSet refine_pseudo_set(const RefineNet& refiner, const Dataset& dataset,
                                 const PseudoLabelSet& pseudo);

// Student examples: full images keep ground truth, point images use pseudo
// labels (empty sentinels skipped; label-free images train as background).
std::vector<TrainingExample> student_examples(const Dataset& dataset,
                                              const DatasetSplit& split,
                                              const PseudoLabelSet& pseudo);

std::vector<InstanceAnnotation> infer_dataset(const SegNet& net, const Dataset& dataset,
                                              double tau);

}  // namespace pointseg
