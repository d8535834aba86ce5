//! CLEAR-MOT evaluation on 2D centre distance.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// One labelled object (ground truth or tracker output).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedObject<T: Scalar> {
    pub id: u64,
    pub position: [T; 2],
    pub class: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame<T: Scalar> {
    pub frame: u64,
    pub objects: Vec<AnnotatedObject<T>>,
}

impl<T: Scalar> AnnotatedFrame<T> {
    pub fn new(frame: u64, objects: Vec<AnnotatedObject<T>>) -> Self {
        Self { frame, objects }
    }

    fn filtered(&self, class: &str) -> Self {
        Self {
            frame: self.frame,
            objects: self
                .objects
                .iter()
                .filter(|o| o.class == class)
                .cloned()
                .collect(),
        }
    }
}

/// Aggregate CLEAR-MOT counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotSummary<T: Scalar> {
    /// `None` when there is no ground truth.
    pub mota: Option<T>,
    /// Mean matched centre distance (m).
    pub motp: T,
    pub false_positives: u64,
    pub misses: u64,
    pub id_switches: u64,
    pub fragmentations: u64,
    pub matches: u64,
    pub gt_count: u64,
}

impl<T: Scalar> MotSummary<T> {
    fn from_counts(
        false_positives: u64,
        misses: u64,
        id_switches: u64,
        fragmentations: u64,
        matches: u64,
        gt_count: u64,
        distance_sum: T,
    ) -> Self {
        let mota = (gt_count > 0).then(|| {
            T::one()
                - T::lit((false_positives + misses + id_switches) as f64) / T::lit(gt_count as f64)
        });
        let motp = if matches > 0 {
            distance_sum / T::lit(matches as f64)
        } else {
            T::zero()
        };
        Self {
            mota,
            motp,
            false_positives,
            misses,
            id_switches,
            fragmentations,
            matches,
            gt_count,
        }
    }
}

fn distance<T: Scalar>(a: &[T; 2], b: &[T; 2]) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_unique<T: Scalar>(frame: &AnnotatedFrame<T>, what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for o in &frame.objects {
        if !seen.insert(o.id) {
            return Err(invalid(format!(
                "duplicate {what} id {} in frame {}",
                o.id, frame.frame
            )));
        }
    }
    Ok(())
}

/// Evaluates one aligned pair of sequences.
///
/// Per frame, correspondences from the previous frame that are still within
/// `match_radius` are kept; the rest are matched by minimum total distance,
/// maximising the number of matches first.
pub fn evaluate_sequence<T: Scalar>(
    gt: &[AnnotatedFrame<T>],
    tracks: &[AnnotatedFrame<T>],
    match_radius: T,
) -> Result<MotSummary<T>> {
    if !(match_radius > T::zero()) {
        return Err(invalid("match radius must be positive"));
    }
    if gt.len() != tracks.len() {
        return Err(invalid(format!(
            "{} ground-truth frames but {} track frames",
            gt.len(),
            tracks.len()
        )));
    }
    if let Some((g, _)) = gt.iter().zip(tracks).find(|(g, t)| g.frame != t.frame) {
        return Err(invalid(format!("frame {} is misaligned", g.frame)));
    }

    let (mut fp, mut misses, mut ids, mut frag, mut matches, mut gt_count) = (0u64, 0, 0, 0, 0, 0);
    let mut distance_sum = T::zero();
    let mut previous: HashMap<u64, u64> = HashMap::new();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    // gt ids currently lost after having been tracked
    let mut lost: BTreeSet<u64> = BTreeSet::new();

    for (gframe, tframe) in gt.iter().zip(tracks) {
        check_unique(gframe, "ground-truth")?;
        check_unique(tframe, "track")?;
        // sort by id so the result does not depend on input order
        let mut gobj: Vec<&AnnotatedObject<T>> = gframe.objects.iter().collect();
        let mut tobj: Vec<&AnnotatedObject<T>> = tframe.objects.iter().collect();
        gobj.sort_by_key(|o| o.id);
        tobj.sort_by_key(|o| o.id);

        let mut gt_matched = vec![None; gobj.len()];
        let mut tr_used = vec![false; tobj.len()];
        let tr_index: HashMap<u64, usize> =
            tobj.iter().enumerate().map(|(i, o)| (o.id, i)).collect();

        for (gi, g) in gobj.iter().enumerate() {
            if let Some(&ti) = previous.get(&g.id).and_then(|tid| tr_index.get(tid)) {
                if !tr_used[ti] && distance(&g.position, &tobj[ti].position) <= match_radius {
                    gt_matched[gi] = Some(ti);
                    tr_used[ti] = true;
                }
            }
        }

        let free_g: Vec<usize> = (0..gobj.len())
            .filter(|&i| gt_matched[i].is_none())
            .collect();
        let free_t: Vec<usize> = (0..tobj.len()).filter(|&i| !tr_used[i]).collect();
        if !free_g.is_empty() && !free_t.is_empty() {
            // dummy columns let any ground truth stay unmatched; their cost
            // exceeds any sum of real distances so cardinality comes first
            let n = free_g.len();
            let cols = free_t.len() + n;
            let dummy = match_radius * T::lit((n + free_t.len() + 1) as f64);
            let mut cost = CostMatrix::forbidden(n, cols);
            for (r, &gi) in free_g.iter().enumerate() {
                for (c, &ti) in free_t.iter().enumerate() {
                    let d = distance(&gobj[gi].position, &tobj[ti].position);
                    if d <= match_radius {
                        cost.set(r, c, d);
                    }
                }
                for c in free_t.len()..cols {
                    cost.set(r, c, dummy);
                }
            }
            let sol = hungarian(&cost)?;
            for (r, &c) in sol.row_to_col.iter().enumerate() {
                if c < free_t.len() {
                    gt_matched[free_g[r]] = Some(free_t[c]);
                    tr_used[free_t[c]] = true;
                }
            }
        }

        let mut current = HashMap::new();
        for (gi, g) in gobj.iter().enumerate() {
            gt_count += 1;
            match gt_matched[gi] {
                Some(ti) => {
                    let t = tobj[ti];
                    matches += 1;
                    distance_sum += distance(&g.position, &t.position);
                    if let Some(&prev) = last_match.get(&g.id) {
                        if prev != t.id {
                            ids += 1;
                        }
                    }
                    if lost.remove(&g.id) {
                        frag += 1;
                    }
                    last_match.insert(g.id, t.id);
                    current.insert(g.id, t.id);
                }
                None => {
                    misses += 1;
                    if last_match.contains_key(&g.id) {
                        lost.insert(g.id);
                    }
                }
            }
        }
        fp += tr_used.iter().filter(|u| !**u).count() as u64;
        previous = current;
    }

    Ok(MotSummary::from_counts(
        fp,
        misses,
        ids,
        frag,
        matches,
        gt_count,
        distance_sum,
    ))
}

/// Runs [`evaluate_sequence`] separately for every class present in either input.
pub fn evaluate_per_class<T: Scalar>(
    gt: &[AnnotatedFrame<T>],
    tracks: &[AnnotatedFrame<T>],
    radii: &BTreeMap<String, T>,
) -> Result<BTreeMap<String, MotSummary<T>>> {
    let classes: BTreeSet<&str> = gt
        .iter()
        .chain(tracks)
        .flat_map(|f| f.objects.iter().map(|o| o.class.as_str()))
        .collect();
    let mut out = BTreeMap::new();
    for class in classes {
        let radius = *radii
            .get(class)
            .ok_or_else(|| invalid(format!("no match radius for class '{class}'")))?;
        let g: Vec<_> = gt.iter().map(|f| f.filtered(class)).collect();
        let t: Vec<_> = tracks.iter().map(|f| f.filtered(class)).collect();
        out.insert(class.to_string(), evaluate_sequence(&g, &t, radius)?);
    }
    Ok(out)
}
