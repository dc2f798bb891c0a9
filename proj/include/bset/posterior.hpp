#pragma once

#include <cstddef>
#include <vector>

namespace bset {

// Monte-Carlo class probabilities for one image set: T passes x d images x C
// classes, plus the per-image mean over passes.
class McPosterior {
 public:
  McPosterior() = default;
  // `per_pass` is row-major [pass][image][class]. The mean is derived here.
  McPosterior(std::size_t passes, std::size_t images, std::size_t classes, std::vector<double> per_pass);

  std::size_t passes() const { return passes_; }
  std::size_t images() const { return images_; }
  std::size_t classes() const { return classes_; }

  double at(std::size_t pass, std::size_t image, std::size_t cls) const {
    return per_pass_[(pass * images_ + image) * classes_ + cls];
  }
  double mean(std::size_t image, std::size_t cls) const { return mean_[image * classes_ + cls]; }

  const std::vector<double>& per_pass() const { return per_pass_; }
  const std::vector<double>& mean_per_image() const { return mean_; }

  // Rows sum to 1 within `tolerance` and entries are in [0, 1].
  void validate(double tolerance = 1e-9) const;

  friend bool operator==(const McPosterior&, const McPosterior&) = default;

 private:
  std::size_t passes_ = 0, images_ = 0, classes_ = 0;
  std::vector<double> per_pass_;
  std::vector<double> mean_;
};

}  // namespace bset
