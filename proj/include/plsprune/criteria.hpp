#pragma once

#include <iosfwd>
#include <vector>

#include "plsprune/network.hpp"
#include "plsprune/pls.hpp"
#include "plsprune/representation.hpp"

namespace plsprune {

enum class Criterion { PlsVip, L1Norm, APoZ };

const char* criterion_name(Criterion c);

/// One importance score per filter; higher means more important under
/// every criterion.
struct FilterScore {
    FilterKey key;
    double score = 0.0;
    Criterion criterion = Criterion::PlsVip;
};

/// Maps VIP feature scores back to filters: the single f_j for global
/// pooling modes, the arithmetic mean of the filter's f_j block for
/// MaxPool2x2.
std::vector<FilterScore> pls_vip_scores(const VipScores& vip,
                                        const FeatureMapIndex& index);

/// Sum of absolute kernel weights per filter, bias excluded.
std::vector<FilterScore> l1_norm_scores(const Network& net);

/// 1 - (fraction of exactly-zero entries in the filter's post-ReLU maps
/// over all samples). Requires every conv layer to be ReLU-followed.
std::vector<FilterScore> apoz_scores(const Network& net, const Dataset& data);

/// CSV rows: layer_index,filter_index,criterion,score
void write_scores_csv(std::ostream& out,
                      const std::vector<FilterScore>& scores);

}  // namespace plsprune
