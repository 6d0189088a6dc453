#ifndef PRINTTRACE_COMMANDS_HPP
#define PRINTTRACE_COMMANDS_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "printtrace/config.hpp"
#include "printtrace/eval.hpp"
#include "printtrace/formats.hpp"
#include "printtrace/pipeline.hpp"
#include "printtrace/predict.hpp"
#include "printtrace/segmentation.hpp"
#include "printtrace/synth.hpp"

namespace printtrace::cli {

namespace fs = std::filesystem;

/// Files named directly plus files with `ext` inside named directories, in
/// sorted order per directory.
inline std::vector<fs::path> collect_inputs(const std::vector<std::string>& args,
                                            const std::vector<std::string>& exts) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && std::find(exts.begin(), exts.end(), e.path().extension().string()) != exts.end())
          found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw IoError("input '" + a + "' does not exist");
    }
  }
  if (out.empty()) throw InvalidArgument("no input files");
  return out;
}

inline fs::path require_out(const Settings& s) {
  if (!s.out || s.out->empty()) throw InvalidArgument("an output path is required (--out)");
  return *s.out;
}

/// Document id -> printer, keyed by file stem.
inline std::map<std::string, std::string> read_labels(const fs::path& label_map) {
  std::map<std::string, std::string> out;
  for (const auto& d : corpus_from_label_map(label_map.parent_path(), label_map))
    out[fs::path(d.id).stem().string()] = d.printer;
  return out;
}

inline int cmd_segment(const Settings& s, const std::vector<std::string>& inputs, std::ostream& log) {
  const auto dir = require_out(s);
  fs::create_directories(dir);
  const auto files = collect_inputs(inputs, {".pgm"});
  std::vector<std::size_t> counts(files.size());
  parallel_for(files.size(), s.jobs, [&](std::size_t i) {
    const auto comps = extract_letters(load_pgm(files[i]), s.policy);
    write_components_csv(dir / (files[i].stem().string() + ".csv"), comps);
    counts[i] = comps.size();
  });
  for (std::size_t i = 0; i < files.size(); ++i) log << files[i].stem().string() << ": " << counts[i] << " components\n";
  return 0;
}

inline int cmd_extract(const Settings& s, const std::vector<std::string>& inputs, std::ostream& log) {
  const auto dir = require_out(s);
  fs::create_directories(dir);
  const auto files = collect_inputs(inputs, {".pgm"});
  std::vector<std::size_t> counts(files.size());
  parallel_for(files.size(), s.jobs, [&](std::size_t i) {
    DescriptorBatch batch;
    batch.variant = s.variant;
    batch.letters = extract_document(load_pgm(files[i]), s.extraction());
    batch.doc_ids.assign(batch.letters.size(), 0);
    save_batch(batch, dir / (files[i].stem().string() + ".pslt"));
    counts[i] = batch.letters.size();
  });
  for (std::size_t i = 0; i < files.size(); ++i) log << files[i].stem().string() << ": " << counts[i] << " letters\n";
  return 0;
}

/// Pools every document of a batch separately.
inline std::vector<PooledFeature> pool_batch(const DescriptorBatch& batch, const PoolingSpec& spec) {
  std::map<std::uint32_t, std::vector<LetterFeature>> by_doc;
  for (std::size_t i = 0; i < batch.letters.size(); ++i) by_doc[batch.doc_ids[i]].push_back(batch.letters[i]);
  std::vector<PooledFeature> out;
  for (const auto& [doc, letters] : by_doc) {
    auto pooled = pool_for_storage(letters, spec, doc);
    out.insert(out.end(), pooled.begin(), pooled.end());
  }
  return out;
}

inline int cmd_pool(const Settings& s, const std::vector<std::string>& inputs, std::ostream& log) {
  const auto dir = require_out(s);
  fs::create_directories(dir);
  const auto files = collect_inputs(inputs, {".pslt"});
  std::vector<std::size_t> counts(files.size());
  parallel_for(files.size(), s.jobs, [&](std::size_t i) {
    const auto batch = load_batch(files[i]);
    PooledBatch pooled{batch.variant, s.pooling, pool_batch(batch, s.pooling)};
    save_pooled(pooled, dir / (files[i].stem().string() + ".pslp"));
    counts[i] = pooled.features.size();
  });
  for (std::size_t i = 0; i < files.size(); ++i)
    log << files[i].stem().string() << ": " << counts[i] << " pooled features\n";
  return 0;
}

inline int cmd_train(const Settings& s, const std::vector<std::string>& inputs, std::ostream& log) {
  const auto out = require_out(s);
  if (!s.label_map) throw InvalidArgument("train needs a label map (label_map)");
  const auto labels = read_labels(*s.label_map);
  const auto files = collect_inputs(inputs, {".pslp"});
  std::vector<TrainingDocument> train;
  std::optional<PooledBatch> first;
  for (const auto& f : files) {
    auto batch = load_pooled(f);
    const auto it = labels.find(f.stem().string());
    if (it == labels.end()) throw InvalidArgument("no label for '" + f.stem().string() + "'");
    if (first && (batch.variant != first->variant || !(batch.spec == first->spec)))
      throw InvalidArgument("'" + f.string() + "' uses a different variant or pooling layout");
    if (!first) first = PooledBatch{batch.variant, batch.spec, {}};
    train.push_back({it->second, batch.spec, std::move(batch.features)});
  }
  const auto bank = build_bank(train, first->spec, first->variant);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_bank(bank, out);
  log << "bank: " << bank.printers().size() << " printers, " << bank.entries().size() << " blocks\n";
  return 0;
}

inline int cmd_predict(const Settings& s, const fs::path& bank_path, const std::vector<std::string>& inputs,
                       std::ostream& out) {
  const auto bank = load_bank(bank_path);
  const auto files = collect_inputs(inputs, {".pslp", ".pgm"});
  std::vector<std::string> lines(files.size());
  parallel_for(files.size(), s.jobs, [&](std::size_t i) {
    std::vector<PooledFeature> features;
    PredictorKind kind = s.predictor.kind.value_or(PredictorKind::Correlation);
    if (files[i].extension() == ".pgm") {
      const auto page = load_pgm(files[i]);
      auto opts = s.extraction();
      opts.variant = bank.variant();
      features = pool_for_storage(extract_document(page, opts), bank.spec());
      kind = s.predictor.for_depth(page.bit_depth());
    } else {
      auto batch = load_pooled(files[i]);
      if (batch.variant != bank.variant() || !(batch.spec == bank.spec()))
        throw InvalidArgument("'" + files[i].string() + "' does not match the bank's variant and pooling layout");
      features = std::move(batch.features);
    }
    lines[i] = to_json(predict_document(bank, features, kind, files[i].stem().string())).dump();
  });
  if (s.out && !s.out->empty()) {
    std::ofstream f(*s.out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + *s.out + "' for writing");
    for (const auto& l : lines) f << l << '\n';
  } else {
    for (const auto& l : lines) out << l << '\n';
  }
  return 0;
}

inline std::vector<CorpusDocument> corpus_of(const Settings& s) {
  if (s.manifest) {
    if (s.corpus_dir || s.label_map) throw InvalidArgument("give either manifest or corpus_dir/label_map, not both");
    return corpus_from_manifest(load_manifest(*s.manifest), s.render ? ManifestImages::Render : ManifestImages::Files);
  }
  if (s.corpus_dir && s.label_map) return corpus_from_label_map(*s.corpus_dir, *s.label_map);
  throw InvalidArgument("evaluate needs a manifest or corpus_dir plus label_map");
}

inline int cmd_evaluate(const Settings& s, std::ostream& log) {
  const auto dir = require_out(s);
  const auto docs = corpus_of(s);
  auto cfg = s.experiment;
  if (s.predictor.kind) {
    cfg.predictor = *s.predictor.kind;
  } else {
    const auto splits = make_splits(docs, cfg.split);
    cfg.predictor = s.predictor.for_depth(docs[splits.front().train.front()].load().bit_depth());
  }
  const auto report = run_experiment(cfg, docs);
  write_report(report, dir);
  log << "accuracy: " << detail::fmt(100.0 * report.mean_accuracy, 2) << "%\n";
  if (report.baseline_mean_accuracy)
    log << "baseline accuracy: " << detail::fmt(100.0 * *report.baseline_mean_accuracy, 2) << "%\n";
  return 0;
}

inline int cmd_synth(const Settings& s, std::ostream& log) {
  const auto dir = require_out(s);
  const auto m = generate_corpus(s.corpus, dir, s.jobs);
  log << "synthesised " << m.documents.size() << " pages into " << dir.string() << "\n";
  return 0;
}

inline int cmd_analyze(const Settings& s, const std::vector<std::string>& inputs, const std::set<std::string>& modes,
                       std::ostream& log) {
  for (const auto& m : modes)
    if (m != "sc-cc" && m != "variance" && m != "lda") throw InvalidArgument("unknown analysis '" + m + "'");
  const auto dir = require_out(s);
  if (!s.label_map) throw InvalidArgument("analyze needs a label map (label_map)");
  const auto labels = read_labels(*s.label_map);
  const auto files = collect_inputs(inputs, {".pslt"});
  const auto printers = [&] {
    std::set<std::string> p;
    for (const auto& f : files) {
      const auto it = labels.find(f.stem().string());
      if (it == labels.end()) throw InvalidArgument("no label for '" + f.stem().string() + "'");
      p.insert(it->second);
    }
    return std::vector<std::string>(p.begin(), p.end());
  }();
  fs::create_directories(dir);

  std::vector<std::vector<PooledFeature>> pooled(files.size());
  std::map<std::string, std::vector<std::vector<double>>> raw_groups, pooled_groups;
  std::vector<std::map<std::string, std::vector<std::vector<double>>>> raw_per_file(files.size());
  parallel_for(files.size(), s.jobs, [&](std::size_t i) {
    const auto batch = load_batch(files[i]);
    pooled[i] = pool_batch(batch, s.pooling);
    if (!modes.count("variance")) return;
    const auto& printer = labels.at(files[i].stem().string());
    std::map<std::uint32_t, std::vector<LetterFeature>> by_doc;
    for (std::size_t k = 0; k < batch.letters.size(); ++k) by_doc[batch.doc_ids[k]].push_back(batch.letters[k]);
    for (const auto& [doc, letters] : by_doc) {
      std::vector<ConnectedComponent> comps;
      for (const auto& l : letters) comps.push_back(l.component);
      const auto layout = make_layout(text_extent(comps), s.pooling);
      std::map<BlockId, std::vector<const LetterFeature*>> blocks;
      for (const auto& l : letters) blocks[assign_block(l.component.bbox, layout)].push_back(&l);
      for (auto& [block, members] : blocks) {
        std::stable_sort(members.begin(), members.end(), [](const auto* a, const auto* b) {
          return std::tie(a->component.centroid_row, a->component.centroid_col, a->component.id) <
                 std::tie(b->component.centroid_row, b->component.centroid_col, b->component.id);
        });
        const auto keep = std::min<std::size_t>(members.size(), s.experiment.analysis.raw_per_block);
        for (std::size_t k = 0; k < keep; ++k) {
          const auto v = members[k]->descriptor.values();
          raw_per_file[i][printer + "/" + detail::block_name(block)].emplace_back(v.begin(), v.end());
        }
      }
    }
  });
  for (const auto& m : raw_per_file)
    for (const auto& [g, v] : m) raw_groups[g].insert(raw_groups[g].end(), v.begin(), v.end());

  std::vector<LabelledFeature> labelled;
  std::vector<std::span<const double>> vectors;
  std::vector<int> ids;
  std::vector<std::string> point_labels;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto& printer = labels.at(files[i].stem().string());
    const int id = static_cast<int>(std::lower_bound(printers.begin(), printers.end(), printer) - printers.begin());
    for (const auto& f : pooled[i]) {
      labelled.push_back({printer, f.block, f.vector});
      pooled_groups[printer + "/" + detail::block_name(f.block)].push_back(f.vector);
      vectors.emplace_back(f.vector);
      ids.push_back(id);
      point_labels.push_back(printer);
    }
  }

  if (modes.count("sc-cc")) {
    std::string csv = "printer,median_same,median_cross,same_pairs,cross_pairs,note\n";
    for (const auto& row : sc_cc_analysis(labelled))
      csv += row.printer + "," + (row.note.empty() ? detail::fmt(row.median_same, 9) : "") + "," +
             (row.note.empty() ? detail::fmt(row.median_cross, 9) : "") + "," + std::to_string(row.same_pairs) + "," +
             std::to_string(row.cross_pairs) + "," + row.note + "\n";
    detail::write_text(dir / "sc_cc.csv", csv);
  }
  if (modes.count("variance")) {
    std::string csv = "group,raw_members,pooled_members,raw_distance,pooled_distance,ratio\n";
    for (const auto& row : variance_report(raw_groups, pooled_groups))
      csv += row.group + "," + std::to_string(row.raw_members) + "," + std::to_string(row.pooled_members) + "," +
             detail::fmt(row.raw_distance, 9) + "," + detail::fmt(row.pooled_distance, 9) + "," +
             detail::fmt(row.ratio, 9) + "\n";
    detail::write_text(dir / "variance.csv", csv);
  }
  if (modes.count("lda")) {
    const auto lda = lda_project(vectors, ids, 2);
    LdaSummary summary{describe(s.pooling), fisher_ratio(lda.points, ids), lda.eigenvalues, point_labels, lda.points};
    detail::write_text(dir / "lda.csv", detail::lda_csv(summary));
    log << "fisher ratio (" << summary.pooling << "): " << detail::fmt(summary.fisher_ratio, 6) << "\n";
  }
  return 0;
}

}  // namespace printtrace::cli

#endif  // PRINTTRACE_COMMANDS_HPP
