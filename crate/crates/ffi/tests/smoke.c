#include <stdio.h>
#include "socialmi.h"

int main(void) {
    SmEnv *env = NULL;
    if (sm_env_create(NULL, 2, 1, &env) != SM_STATUS_OK) return 1;
    uint8_t actions[2] = {1, 7};
    double rewards[2];
    bool done = false;
    for (int i = 0; i < 10; i++) {
        if (sm_env_step(env, actions, 2, rewards, &done) != SM_STATUS_OK) return 2;
    }
    double obs[SM_OBS_LEN];
    if (sm_env_observation(env, 0, obs, SM_OBS_LEN, NULL) != SM_STATUS_OK) return 3;
    size_t apples = 0;
    sm_env_apple_count(env, &apples);
    if (sm_env_observation(env, 0, obs, 3, NULL) != SM_STATUS_BUFFER_TOO_SMALL) return 4;
    sm_env_free(env);
    printf("apples %zu p3 %.2f\n", apples, sm_respawn_probability(3));
    return 0;
}
