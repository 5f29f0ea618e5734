#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>

#include "csdenoise/checkpoint.hpp"
#include "csdenoise/losses.hpp"
#include "csdenoise/train.hpp"
#include "csdenoise/wav.hpp"

namespace py = pybind11;
using namespace csd;

namespace {

CTensor ctensor_from_array(const py::array_t<std::complex<double>>& a) {
  py::buffer_info info = a.request();
  Shape shape(info.shape.begin(), info.shape.end());
  auto arr = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>(a);
  const auto* src = static_cast<const std::complex<double>*>(arr.request().ptr);
  CTensor t = CTensor::zeros(shape);
  for (int64_t i = 0; i < t.numel(); ++i) {
    t.re[i] = src[i].real();
    t.im[i] = src[i].imag();
  }
  return t;
}

py::array_t<std::complex<double>> array_from_ctensor(const CTensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<std::complex<double>> out(shape);
  auto* dst = static_cast<std::complex<double>*>(out.request().ptr);
  for (int64_t i = 0; i < t.numel(); ++i) dst[i] = {t.re[i], t.im[i]};
  return out;
}

RTensor rtensor_from_array(const py::array_t<double>& a) {
  auto arr = py::array_t<double, py::array::c_style | py::array::forcecast>(a);
  py::buffer_info info = arr.request();
  Shape shape(info.shape.begin(), info.shape.end());
  const auto* src = static_cast<const double*>(info.ptr);
  RTensor t(shape);
  std::copy(src, src + t.numel(), t.data.begin());
  return t;
}

StftConfig stft_config(int image_size, int win_length) {
  StftConfig cfg;
  cfg.image_size = image_size;
  cfg.n_fft = 2 * image_size - 1;
  cfg.win_length = win_length > 0 ? win_length : std::max(2, (1000 * cfg.n_fft) / 1023);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "complex spectrogram denoiser core";

  py::class_<SpectroImage>(m, "SpectroImage")
      .def_property_readonly("image", [](const SpectroImage& s) { return array_from_ctensor(s.image); })
      .def_readonly("orig_frames", &SpectroImage::orig_frames)
      .def_readonly("hop_length", &SpectroImage::hop_length)
      .def_readonly("audio_length", &SpectroImage::audio_length)
      .def_readonly("win_length", &SpectroImage::win_length)
      .def_readonly("n_fft", &SpectroImage::n_fft)
      .def_readonly("image_size", &SpectroImage::image_size)
      .def_readonly("sample_rate", &SpectroImage::sample_rate);

  m.def(
      "stft_image",
      [](const std::vector<double>& samples, int sample_rate, int image_size, int win_length) {
        AudioClip clip{samples, sample_rate};
        return stft_image(clip, stft_config(image_size, win_length));
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("image_size") = 512,
      py::arg("win_length") = 0);

  m.def("istft_audio", [](const SpectroImage& img) { return istft_audio(img).samples; });

  m.def(
      "istft_image_array",
      [](const py::array_t<std::complex<double>>& image, const SpectroImage& meta) {
        SpectroImage img = meta;
        img.image = ctensor_from_array(image);
        return istft_audio(img).samples;
      },
      py::arg("image"), py::arg("meta"),
      "inverse transform of a [C,S,S] complex image using another image's provenance");

  m.def("cmatmul", [](const py::array_t<std::complex<double>>& a,
                      const py::array_t<std::complex<double>>& b) {
    return array_from_ctensor(cmatmul_value(ctensor_from_array(a), ctensor_from_array(b)));
  });

  m.def("cabs", [](const py::array_t<std::complex<double>>& a) {
    NoGradGuard ng;
    Var v = cabs(Var::constant(ctensor_from_array(a)));
    const RTensor& re = v.value().re;
    std::vector<py::ssize_t> shape(re.shape.begin(), re.shape.end());
    py::array_t<double> out(shape);
    std::copy(re.data.begin(), re.data.end(), static_cast<double*>(out.request().ptr));
    return out;
  });

  m.def("ssim", [](const py::array_t<double>& x, const py::array_t<double>& y) {
    NoGradGuard ng;
    Var vx = Var::constant(CTensor::real(rtensor_from_array(x)));
    Var vy = Var::constant(CTensor::real(rtensor_from_array(y)));
    return ssim(vx, vy).item();
  });

  m.def("sdr", [](const std::vector<double>& y_hat, const std::vector<double>& y) {
    return sdr_metric(y_hat, y);
  });

  m.def("sdr_loss", [](const std::vector<double>& y_hat, const std::vector<double>& y) {
    NoGradGuard ng;
    Var vh = Var::constant(CTensor::real(RTensor(Shape{(int64_t)y_hat.size()}, y_hat)));
    Var vy = Var::constant(CTensor::real(RTensor(Shape{(int64_t)y.size()}, y)));
    return sdr_loss(vh, vy).item();
  });

  m.def("read_wav", [](const std::string& path) {
    const AudioClip c = read_wav(path);
    return py::make_tuple(c.samples, c.sample_rate);
  });
  m.def("write_wav", [](const std::vector<double>& samples, int sample_rate,
                        const std::string& path) { write_wav({samples, sample_rate}, path); });

  m.def(
      "denoise",
      [](const std::string& checkpoint_path, const std::vector<double>& samples,
         int sample_rate) {
        const Checkpoint ckpt = load_checkpoint(checkpoint_path);
        const RunConfig cfg = RunConfig::from_text(ckpt.config_text);
        auto model = make_core(cfg);
        model->params().load(ckpt.tensors);
        return denoise_clip(*model, {samples, sample_rate}, cfg.stft).samples;
      },
      py::arg("checkpoint_path"), py::arg("samples"), py::arg("sample_rate") = 16000);

  m.def(
      "model_forward",
      [](const std::string& config_text, const py::array_t<std::complex<double>>& image) {
        const RunConfig cfg = RunConfig::from_text(config_text);
        auto model = make_core(cfg);
        NoGradGuard ng;
        Var out = model->forward_inference(Var::constant(ctensor_from_array(image)));
        return array_from_ctensor(out.value());
      },
      py::arg("config_text"), py::arg("image"),
      "forward a [N,C,S,S] complex image through a freshly initialized core");

  m.def("default_config_text", [] { return RunConfig().to_text(); });
}
