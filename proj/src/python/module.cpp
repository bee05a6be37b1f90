#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pointseg/annotations.hpp"
#include "pointseg/budget.hpp"
#include "pointseg/eval.hpp"
#include "pointseg/pipeline.hpp"
#include "pointseg/pseudo.hpp"
#include "pointseg/refine.hpp"
#include "pointseg/synthgen.hpp"

namespace py = pybind11;
using namespace pointseg;

namespace {

BinaryMask mask_from_array(const py::array_t<uint8_t>& arr) {
    if (arr.ndim() != 2) throw ShapeError("mask must be 2-D");
    BinaryMask m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
    auto r = arr.unchecked<2>();
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) m.at(y, x) = r(y, x) ? 1 : 0;
    return m;
}

py::array_t<uint8_t> mask_to_array(const BinaryMask& m) {
    py::array_t<uint8_t> arr({m.height, m.width});
    auto w = arr.mutable_unchecked<2>();
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) w(y, x) = m.at(y, x);
    return arr;
}

py::array_t<double> tensor_to_array(const Tensor& t) {
    py::array_t<double> arr(t.shape);
    std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
    return arr;
}

py::dict report_to_dict(const APReport& r) {
    py::dict d;
    d["ap"] = r.ap;
    d["ap50"] = r.ap50;
    d["ap75"] = r.ap75;
    d["ar100"] = r.ar100;
    py::dict per_cat;
    for (const auto& [cat, ap] : r.per_category_ap) per_cat[py::int_(cat)] = ap;
    d["per_category_ap"] = per_cat;
    return d;
}

InstanceAnnotation annotation_from_dict(const py::dict& d) {
    InstanceAnnotation a = make_annotation(
        d["id"].cast<int64_t>(), d["image_id"].cast<int64_t>(),
        d["category"].cast<int>(), mask_from_array(d["mask"].cast<py::array_t<uint8_t>>()));
    if (d.contains("score")) a.score = d["score"].cast<double>();
    return a;
}

}  // namespace

PYBIND11_MODULE(_pointseg, m) {
    m.doc() = "Point-supervised instance segmentation core";

    // ---- masks & annotations
    m.def("encode_rle", [](const py::array_t<uint8_t>& mask) {
        const Rle rle = encode_rle(mask_from_array(mask));
        return py::make_tuple(rle.height, rle.width, rle.counts);
    });
    m.def("decode_rle", [](int height, int width, const std::vector<uint32_t>& counts) {
        Rle rle;
        rle.height = height;
        rle.width = width;
        rle.counts = counts;
        return mask_to_array(decode_rle(rle));
    });
    m.def("centroid_point", [](const py::array_t<uint8_t>& mask, int category) {
        const auto ann = make_annotation(1, 1, category, mask_from_array(mask));
        const PointLabel p = centroid_point(ann);
        return py::make_tuple(p.x, p.y, p.category);
    }, py::arg("mask"), py::arg("category") = 1);
    m.def("random_point", [](const py::array_t<uint8_t>& mask, uint64_t seed, int category) {
        const auto ann = make_annotation(1, 1, category, mask_from_array(mask));
        const PointLabel p = random_point(ann, seed);
        return py::make_tuple(p.x, p.y, p.category);
    }, py::arg("mask"), py::arg("seed"), py::arg("category") = 1);
    m.def("mask_iou", [](const py::array_t<uint8_t>& a, const py::array_t<uint8_t>& b) {
        return mask_iou(mask_from_array(a), mask_from_array(b));
    });

    // ---- budget
    m.def("per_image_cost", [](const std::string& label) {
        return per_image_cost(BudgetModel{}, label_type_from_string(label));
    });
    m.def("mix_budget_days",
          [](const std::map<std::string, double>& mix, int64_t images) {
              LabelMix lm;
              lm.n_images = images;
              for (const auto& [name, fraction] : mix)
                  lm.parts.emplace_back(label_type_from_string(name), fraction);
              return mix_budget_days(BudgetModel{}, lm);
          },
          py::arg("mix"), py::arg("images") = 118287);

    // ---- refine geometry
    m.def("encode_point_heatmap",
          [](int x, int y, int category, int height, int width, int num_categories,
             double sigma) {
              PointLabel p{x, y, category, std::nullopt};
              return tensor_to_array(
                  encode_point_heatmap(p, height, width, num_categories, sigma));
          },
          py::arg("x"), py::arg("y"), py::arg("category"), py::arg("height"),
          py::arg("width"), py::arg("num_categories") = 3, py::arg("sigma") = 6.0);
    m.def("box_from_mask", [](const py::array_t<uint8_t>& mask) {
        const CropRegion b = box_from_mask(mask_from_array(mask));
        return py::make_tuple(b.x_min, b.y_min, b.x_max, b.y_max);
    });
    m.def("expand_box",
          [](std::tuple<int, int, int, int> box, double factor, int image_w, int image_h) {
              const CropRegion in{std::get<0>(box), std::get<1>(box), std::get<2>(box),
                                  std::get<3>(box)};
              const CropRegion out = expand_box(in, factor, image_w, image_h);
              return py::make_tuple(out.x_min, out.y_min, out.x_max, out.y_max);
          },
          py::arg("box"), py::arg("factor"), py::arg("image_w"), py::arg("image_h"));

    // ---- level selection over raw score grids
    m.def("select_level",
          [](int x, int y, int category, const std::vector<py::array_t<double>>& scores,
             int image_h, int image_w) {
              std::vector<ProposalGrid> grids;
              for (size_t i = 0; i < scores.size(); ++i) {
                  const auto& arr = scores[i];
                  if (arr.ndim() != 3) throw ShapeError("score grid must be [C,S,S]");
                  ProposalGrid g;
                  g.level = static_cast<int>(i) + 1;
                  g.scores = Tensor({static_cast<int>(arr.shape(0)),
                                     static_cast<int>(arr.shape(1)),
                                     static_cast<int>(arr.shape(2))});
                  std::copy(arr.data(), arr.data() + arr.size(), g.scores.data.begin());
                  g.kernels = Tensor({1, static_cast<int>(arr.shape(1)),
                                      static_cast<int>(arr.shape(2))});
                  grids.push_back(std::move(g));
              }
              PointLabel p{x, y, category, std::nullopt};
              const auto [level, prop] = select_level(p, grids, image_h, image_w);
              py::dict d;
              d["level"] = level;
              d["row"] = prop.row;
              d["col"] = prop.col;
              d["score"] = prop.score;
              return d;
          },
          py::arg("x"), py::arg("y"), py::arg("category"), py::arg("scores"),
          py::arg("image_h"), py::arg("image_w"));

    // ---- evaluation over annotation dicts {id, image_id, category, mask[, score]}
    m.def("evaluate", [](const std::vector<py::dict>& predictions,
                         const std::vector<py::dict>& ground_truth) {
        std::vector<InstanceAnnotation> preds, gts;
        for (const auto& d : predictions) preds.push_back(annotation_from_dict(d));
        for (const auto& d : ground_truth) gts.push_back(annotation_from_dict(d));
        return report_to_dict(evaluate(preds, gts));
    });

    // ---- dataset tooling
    m.def("generate_synth",
          [](const std::string& out_json, int images, int seed, int width, int height,
             int min_size, int max_size, double overlap) {
              SynthSpec spec;
              spec.n_images = images;
              spec.seed = static_cast<uint64_t>(seed);
              spec.width = width;
              spec.height = height;
              spec.min_size = min_size;
              spec.max_size = max_size;
              spec.max_overlap_iou = overlap;
              const SynthResult r = generate(spec);
              write_dataset(r.dataset, out_json);
              py::dict d;
              d["images"] = r.dataset.images.size();
              d["annotations"] = r.dataset.annotations.size();
              d["placement_failures"] = r.placement_failures;
              return d;
          },
          py::arg("out_json"), py::arg("images") = 16, py::arg("seed") = 0,
          py::arg("width") = 64, py::arg("height") = 64, py::arg("min_size") = 6,
          py::arg("max_size") = 28, py::arg("overlap") = 0.0);
    m.def("split_dataset_ids",
          [](const std::string& dataset_json, double fraction, uint64_t seed) {
              const Dataset ds = read_dataset(dataset_json);
              const DatasetSplit s = split_dataset(ds, fraction, seed);
              return py::make_tuple(std::vector<int64_t>(s.full_ids.begin(), s.full_ids.end()),
                                    std::vector<int64_t>(s.point_ids.begin(),
                                                         s.point_ids.end()));
          },
          py::arg("dataset_json"), py::arg("fraction"), py::arg("seed") = 0);

    // ---- full experiment
    m.def("run_experiment", [](const std::string& config_json_text) {
        const ExperimentConfig cfg = ExperimentConfig::from_json(config_json_text);
        const ExperimentReport report = run_iterative(cfg);
        return report.to_json();
    });
}
