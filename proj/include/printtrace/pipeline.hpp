#ifndef PRINTTRACE_PIPELINE_HPP
#define PRINTTRACE_PIPELINE_HPP

#include <optional>
#include <vector>

#include "printtrace/formats.hpp"
#include "printtrace/image.hpp"
#include "printtrace/pooling.hpp"
#include "printtrace/psltd.hpp"
#include "printtrace/segmentation.hpp"

namespace printtrace {

struct ExtractionOptions {
  FilterPolicy policy;
  std::optional<DescriptorParams> params;  // default: chosen from the image depth
  Variant variant = Variant::Approx;

  DescriptorParams params_for(const DocumentImage& img) const {
    return params ? *params : DescriptorParams::for_depth(img.bit_depth());
  }
};

/// Segments a page and describes every letter. Results are rounded to the
/// precision of the descriptor batch format so that in-memory and file-based
/// pipelines agree bit for bit.
inline std::vector<LetterFeature> extract_document(const DocumentImage& page, const ExtractionOptions& opts) {
  const auto params = opts.params_for(page);
  params.validate(page.bit_depth());
  std::vector<LetterFeature> letters;
  for (const auto& comp : extract_letters(page, opts.policy)) {
    const auto crop = crop_letter(page, comp);
    if (!crop) continue;  // too small for a 3x3 neighbourhood
    letters.push_back(to_storage_precision({comp, extract_psltd(*crop, params, opts.variant)}));
  }
  return letters;
}

/// Pools letters and rounds pooled vectors to the pooled-file precision.
inline std::vector<PooledFeature> pool_for_storage(const std::vector<LetterFeature>& letters, const PoolingSpec& spec,
                                                   std::uint32_t doc_id = 0) {
  if (letters.empty()) return {};
  auto pooled = pool_letters(letters, spec, doc_id).features;
  for (auto& f : pooled) f.vector = round_to_float(f.vector);
  return pooled;
}

}  // namespace printtrace

#endif  // PRINTTRACE_PIPELINE_HPP
