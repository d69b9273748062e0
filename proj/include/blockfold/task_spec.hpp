#pragma once

#include <string>
#include <vector>

#include "blockfold/block.hpp"

namespace blockfold {

// Label alphabet for one design task: 20 amino acids, 4 nucleotides, or a
// dataset-defined element vocabulary.
struct TaskSpec {
    EntityKind entity = EntityKind::Protein;
    int num_classes = 0;
    std::vector<std::string> class_names;

    static TaskSpec protein() {
        TaskSpec t;
        t.entity = EntityKind::Protein;
        for (char c : std::string("ACDEFGHIKLMNPQRSTVWY")) t.class_names.emplace_back(1, c);
        t.num_classes = 20;
        return t;
    }

    static TaskSpec rna() {
        TaskSpec t;
        t.entity = EntityKind::Rna;
        t.class_names = {"A", "U", "C", "G"};
        t.num_classes = 4;
        return t;
    }

    static TaskSpec atomic(std::vector<std::string> element_vocab) {
        TaskSpec t;
        t.entity = EntityKind::Atomic;
        t.class_names = std::move(element_vocab);
        t.num_classes = static_cast<int>(t.class_names.size());
        return t;
    }

    // -1 for "X" (masked) or anything outside the alphabet.
    int class_index(const std::string& label) const {
        for (int i = 0; i < num_classes; ++i)
            if (class_names[i] == label) return i;
        return -1;
    }
};

}  // namespace blockfold
