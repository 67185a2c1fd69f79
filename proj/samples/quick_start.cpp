// Generates one synthetic fragment per class, cuts grid patches, featurizes them
// and reports the accuracy of a small boosted model on the training patches.
#include <iostream>

#include "lithopatch/lithopatch.hpp"

using namespace lithopatch;

int main() {
  FeatureMatrix data;
  data.cols = kHsiLbpLength;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto src = make_fixture_image(static_cast<StoneClass>(c), View::surface, 0, derive_seed(7, {std::uint64_t(c)}), 640);
    const auto patches = extract_grid_patches(src, 128, 20);
    for (const auto& p : patches) data.append(featurize(p.patch).values, c);
    std::cout << class_name(c) << ": " << patches.size() << " patches\n";
  }

  BoostParams params;
  params.n_rounds = 20;
  const auto model = train_classifier(data, params);
  const auto report = evaluate_model(model, data, "boosted", "surface");
  std::cout << format_report_tables({report});
}
