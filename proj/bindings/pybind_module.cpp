#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sarmatch/data.hpp"
#include "sarmatch/enhance.hpp"
#include "sarmatch/losses.hpp"
#include "sarmatch/metrics.hpp"
#include "sarmatch/model.hpp"
#include "sarmatch/ncc.hpp"
#include "sarmatch/selftest.hpp"

namespace py = pybind11;
using namespace sarmatch;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const Array& a) {
    std::vector<int> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<int>(a.shape(i));
    std::vector<float> data(a.data(), a.data() + a.size());
    return Tensor::from_vector(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::array_t<float> array_from_heatmap(const Heatmap& hm) {
    py::array_t<float> out({hm.h, hm.w});
    std::copy(hm.values.begin(), hm.values.end(), out.mutable_data());
    return out;
}

Heatmap heatmap_from_array(const Array& a, HeatmapLevel level) {
    if (a.ndim() != 2) throw ArgumentError("heatmap array must be 2-D");
    Heatmap hm;
    hm.level = level;
    hm.h = static_cast<int>(a.shape(0));
    hm.w = static_cast<int>(a.shape(1));
    hm.values.assign(a.data(), a.data() + a.size());
    return hm;
}

Image image_from_array(const Array& a) {
    if (a.ndim() != 2) throw ArgumentError("image array must be 2-D");
    Image img = make_image(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), img.pix.begin());
    return img;
}

py::array_t<float> array_from_image(const Image& img) {
    py::array_t<float> out({img.h, img.w});
    std::copy(img.pix.begin(), img.pix.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_sarmatch, m) {
    m.doc() = "SAR-optical multiscale template matching core";

    m.def(
        "synth_pair",
        [](uint64_t seed, int size, const std::string& gap) {
            auto [opt, sar] = synth_pair(seed, size, gap_from_string(gap));
            return py::make_tuple(array_from_image(opt), array_from_image(sar));
        },
        py::arg("seed"), py::arg("size") = 64, py::arg("gap") = "mild",
        "Aligned (optical, sar) pair as float32 arrays in [0,1]");

    m.def(
        "ncc_heatmap",
        [](const Array& tpl, const Array& ref, const std::string& mode) {
            if (tpl.ndim() != 3 || ref.ndim() != 3)
                throw ArgumentError("ncc_heatmap expects [C,h,w] and [C,H,W] arrays");
            Heatmap hm = ncc_heatmap(tensor_from_array(tpl), tensor_from_array(ref),
                                     HeatmapLevel::Shallow, ncc_mode_from_string(mode));
            return array_from_heatmap(hm);
        },
        py::arg("template_chw"), py::arg("reference_chw"), py::arg("mode") = "joint",
        "FFT-accelerated normalized cross-correlation heatmap");

    m.def(
        "ncc_heatmap_naive",
        [](const Array& tpl, const Array& ref, const std::string& mode) {
            Heatmap hm = ncc_heatmap_naive(tensor_from_array(tpl), tensor_from_array(ref),
                                           HeatmapLevel::Shallow, ncc_mode_from_string(mode));
            return array_from_heatmap(hm);
        },
        py::arg("template_chw"), py::arg("reference_chw"), py::arg("mode") = "joint",
        "Direct-summation reference NCC");

    m.def(
        "fuse_heatmaps",
        [](const Array& deep, const Array& shallow, bool nearest) {
            Heatmap d = heatmap_from_array(deep, HeatmapLevel::Deep);
            Heatmap s = heatmap_from_array(shallow, HeatmapLevel::Shallow);
            return array_from_heatmap(
                fuse_heatmaps(d, s, nearest ? UpscaleMode::Nearest : UpscaleMode::Bilinear));
        },
        py::arg("deep"), py::arg("shallow"), py::arg("nearest") = false,
        "upscale(deep) * shallow, elementwise");

    m.def(
        "linear_attention",
        [](const Array& q, const Array& k, const Array& v, int heads, bool normalized) {
            return array_from_tensor(linear_attention(tensor_from_array(q), tensor_from_array(k),
                                                      tensor_from_array(v), heads, normalized));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("heads") = 1,
        py::arg("normalized") = true, "Kernel linear attention over [N,C] token matrices");

    m.def(
        "mutual_information",
        [](const Array& x, const Array& y, int bins, float sigma) {
            return mutual_information(tensor_from_array(x), tensor_from_array(y), bins, sigma)
                .item();
        },
        py::arg("x"), py::arg("y"), py::arg("bins") = 16, py::arg("sigma") = 1.0f / 16,
        "Soft-histogram mutual information of two 1-D sequences");

    m.def(
        "compute_metrics",
        [](const std::vector<std::tuple<int, int, int, int>>& rows, const std::string& mode) {
            std::vector<PredGt> pairs;
            pairs.reserve(rows.size());
            for (const auto& [pr, pc, gr, gc] : rows) pairs.push_back({{pr, pc}, {gr, gc}});
            EvalReport r = compute_metrics(pairs, metric_mode_from_string(mode));
            py::dict d;
            d["n_pairs"] = r.n_pairs;
            d["rmse_all"] = r.rmse_all;
            d["cmr_at_1"] = r.cmr1;
            d["cmr_at_5"] = r.cmr5;
            d["rmse_at_5"] = r.rmse5;
            d["fmr_at_5"] = r.fmr5;
            return d;
        },
        py::arg("rows"), py::arg("mode") = "mean",
        "rows of (pred_row, pred_col, gt_row, gt_col) -> metric dict");

    m.def("selftest", [] { return run_selftest(false) == 0; },
          "Run the built-in oracle checks quietly; True when all pass");

    py::class_<MatchResult>(m, "MatchResult")
        .def_readonly("row", &MatchResult::row)
        .def_readonly("col", &MatchResult::col)
        .def_readonly("peak_score", &MatchResult::peak_score)
        .def_readonly("elapsed_ms", &MatchResult::elapsed_ms)
        .def_property_readonly("shallow",
                               [](const MatchResult& r) { return array_from_heatmap(r.shallow); })
        .def_property_readonly("fused",
                               [](const MatchResult& r) { return array_from_heatmap(r.fused); })
        .def_property_readonly("deep", [](const MatchResult& r) {
            return r.deep.values.empty() ? py::object(py::none())
                                         : py::object(array_from_heatmap(r.deep));
        });

    py::class_<Model>(m, "Matcher")
        .def(py::init([](const std::string& checkpoint) {
                 return Model::from_checkpoint(checkpoint);
             }),
             py::arg("checkpoint"), "Load a trained model from a CKPT1 checkpoint")
        .def(
            "match",
            [](const Model& model, const Array& optical, const Array& sar, bool shallow_only) {
                ImagePair pair;
                pair.optical = image_from_array(optical);
                pair.sar = image_from_array(sar);
                return model.infer(pair, shallow_only);
            },
            py::arg("optical"), py::arg("sar"), py::arg("shallow_only") = false,
            "Match a SAR template against an optical reference");

    m.attr("__version__") = "0.1.0";
}
