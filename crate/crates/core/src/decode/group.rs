use serde::{Deserialize, Serialize};

use super::peaks::KeypointCandidate;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseKeypoint {
    pub x: f64,
    pub y: f64,
    /// 0 when the pose has no keypoint of this type.
    pub score: f64,
}

/// A grouped person instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub keypoints: Vec<PoseKeypoint>,
    /// Mean score of the present keypoints.
    pub instance_score: f64,
    pub tag_mean: f64,
}

impl Pose {
    pub fn present(&self) -> usize {
        self.keypoints.iter().filter(|k| k.score > 0.0).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    /// Candidates join poses one at a time in descending score.
    #[default]
    Greedy,
    /// Per keypoint type, a minimum-cost assignment of candidates to poses.
    Optimal,
}

struct Partial {
    members: Vec<Option<KeypointCandidate>>,
    tag_sum: f64,
    count: usize,
}

impl Partial {
    fn new(k: usize, c: KeypointCandidate) -> Self {
        let mut p = Self {
            members: vec![None; k],
            tag_sum: 0.0,
            count: 0,
        };
        p.add(c);
        p
    }

    fn mean(&self) -> f64 {
        self.tag_sum / self.count as f64
    }

    fn add(&mut self, c: KeypointCandidate) {
        self.members[c.k] = Some(c);
        self.tag_sum += c.tag;
        self.count += 1;
    }

    fn finish(self) -> Pose {
        let keypoints: Vec<PoseKeypoint> = self
            .members
            .iter()
            .map(|m| {
                m.map(|c| PoseKeypoint {
                    x: c.x,
                    y: c.y,
                    score: c.score,
                })
                .unwrap_or_default()
            })
            .collect();
        let score = self.members.iter().flatten().map(|c| c.score).sum::<f64>() / self.count as f64;
        Pose {
            keypoints,
            instance_score: score,
            tag_mean: self.mean(),
        }
    }
}

/// Groups candidates into poses by tag distance. Types are visited in index
/// order and, within a type, candidates by descending score (ties by `(y, x)`).
/// A candidate joins the pose whose running tag mean is nearest, provided the
/// distance is below `tag_threshold` and the pose lacks that type; otherwise
/// it starts a new pose.
pub fn group(
    candidates: &[KeypointCandidate],
    num_keypoints: usize,
    tag_threshold: f64,
    mode: GroupingMode,
) -> Vec<Pose> {
    let mut poses: Vec<Partial> = Vec::new();
    for k in 0..num_keypoints {
        let mut cands: Vec<KeypointCandidate> =
            candidates.iter().filter(|c| c.k == k).copied().collect();
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.y.total_cmp(&b.y))
                .then(a.x.total_cmp(&b.x))
        });
        match mode {
            GroupingMode::Greedy => {
                for c in cands {
                    let best = poses
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.members[k].is_none())
                        .map(|(i, p)| (i, (c.tag - p.mean()).abs()))
                        .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                            Some((_, bd)) if bd <= d => acc,
                            _ => Some((i, d)),
                        });
                    match best {
                        Some((i, d)) if d < tag_threshold => poses[i].add(c),
                        _ => poses.push(Partial::new(num_keypoints, c)),
                    }
                }
            }
            GroupingMode::Optimal => {
                let cost: Vec<Vec<f64>> = cands
                    .iter()
                    .map(|c| poses.iter().map(|p| (c.tag - p.mean()).abs()).collect())
                    .collect();
                let assignment = min_cost_assignment(&cost);
                let mut fresh = Vec::new();
                for (c, a) in cands.into_iter().zip(assignment) {
                    match a {
                        Some(i) if (c.tag - poses[i].mean()).abs() < tag_threshold => {
                            poses[i].add(c)
                        }
                        _ => fresh.push(Partial::new(num_keypoints, c)),
                    }
                }
                poses.extend(fresh);
            }
        }
    }
    poses.into_iter().map(Partial::finish).collect()
}

/// Minimum-cost matching of rows to distinct columns of a rectangular cost
/// matrix; rows beyond the column count stay unassigned. Hungarian method with
/// potentials, `O(n^2 m)`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    // Work on the orientation with no more rows than columns.
    let transpose = rows > cols;
    let (n, m) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let at = |i: usize, j: usize| if transpose { cost[j][i] } else { cost[i][j] };

    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![None; rows];
    for j in 1..=m {
        if owner[j] != 0 {
            let (i, jj) = (owner[j] - 1, j - 1);
            if transpose {
                result[jj] = Some(i);
            } else {
                result[i] = Some(jj);
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_square_and_rectangular() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        assert_eq!(min_cost_assignment(&cost), [Some(1), Some(0), Some(2)]);
        let wide = vec![vec![5.0, 1.0, 9.0]];
        assert_eq!(min_cost_assignment(&wide), [Some(1)]);
        let tall = vec![vec![3.0], vec![1.0], vec![2.0]];
        assert_eq!(min_cost_assignment(&tall), [None, Some(0), None]);
        assert_eq!(min_cost_assignment(&[vec![], vec![]]), [None, None]);
    }
}
