#include <stdio.h>
#include <stdlib.h>

#include "neighbor_xai.h"

#define CHECK(call)                                                    \
    do {                                                               \
        nx_status s_ = (call);                                         \
        if (s_ != NX_STATUS_OK) {                                      \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, nx_last_error()); \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 2) {
        return 2;
    }
    nx_graph *graph = NULL;
    nx_model *model = NULL;
    nx_explanations *exps = NULL;
    CHECK(nx_graph_load(argv[1], &graph));
    CHECK(nx_model_train(graph, NX_ARCH_GCN, true, 30, 0, &model));
    CHECK(nx_explain(model, graph, "saliency", 0, 1, &exps));

    size_t target = 0, len = 0;
    nx_status s = nx_explanations_get(exps, 0, &target, NULL, NULL, 0, &len);
    if (s != NX_STATUS_OK && s != NX_STATUS_BUFFER_TOO_SMALL) {
        return 1;
    }
    size_t *ids = malloc((len + 1) * sizeof *ids);
    double *scores = malloc((len + 1) * sizeof *scores);
    CHECK(nx_explanations_get(exps, 0, &target, ids, scores, len, &len));

    double auc = 0.0;
    CHECK(nx_metric_auc(model, graph, exps, "loyalty", 1, &auc));
    printf("nodes=%zu explained=%zu target=%zu neighbors=%zu auc=%.6f\n", nx_graph_num_nodes(graph),
           nx_explanations_len(exps), target, len, auc);

    if (nx_explain(model, graph, "lime", 0, 1, &exps) != NX_STATUS_INVALID_ARGUMENT) {
        return 1;
    }
    printf("error=%s\n", nx_last_error());

    free(ids);
    free(scores);
    nx_explanations_free(exps);
    nx_model_free(model);
    nx_graph_free(graph);
    return 0;
}
