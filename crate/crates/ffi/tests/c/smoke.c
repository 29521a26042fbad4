#include <stdio.h>
#include "dcpf.h"

#define CHECK(call)                                                     \
    do {                                                                \
        DcpfStatus s_ = (call);                                         \
        if (s_ != DCPF_STATUS_OK) {                                     \
            fprintf(stderr, "%s: %d %s\n", #call, s_, dcpf_last_error()); \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(void) {
    DcpfNetwork *net = NULL;
    DcpfParams *hot = NULL;
    CHECK(dcpf_network_load("case14", &net));
    CHECK(dcpf_params_hot(net, &hot));

    size_t nb = dcpf_network_n_injections(net), ne = dcpf_network_n_branches(net);
    double p[13] = {0}, a[20], b[20];
    if (nb != 13 || ne != 20) return 2;
    p[1] = -0.5;
    p[4] = 0.2;
    CHECK(dcpf_dc_flows(net, hot, p, nb, a, ne));
    CHECK(dcpf_ptdf_flows(net, hot, p, nb, b, ne));
    for (size_t e = 0; e < ne; e++) {
        double d = a[e] - b[e];
        if (d > 1e-12 || d < -1e-12) return 3;
    }

    /* wrong buffer length is reported, not written through */
    if (dcpf_dc_flows(net, hot, p, nb - 1, a, ne) != DCPF_STATUS_DIMENSION) return 4;
    if (dcpf_last_error() == NULL) return 5;

    DcpfNetwork *islanded = NULL;
    if (dcpf_network_remove_branch(net, 14, &islanded) != DCPF_STATUS_ISLANDING) return 6;

    printf("%s %.6f\n", dcpf_version(), a[0]);
    dcpf_params_free(hot);
    dcpf_network_free(net);
    return 0;
}
