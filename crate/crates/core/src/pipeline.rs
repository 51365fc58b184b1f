//! Per-scan odometry flow: propagate, deskew, build factors, optimize,
//! maintain features and the map.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometric::{
    analyze_localizability, deskew, maybe_update_map, subsample, GeometricFactor, Localizability, VoxelGeoMap,
};
use crate::geometry::{GravityDir, NavState, Pose};
use crate::inertial::{imu_segments, initialize_static, propagate_sequence, ImuNoise};
use crate::io::{Config, ImuSample, LidarScan};
use crate::photometric::{
    build_bias_lut, build_image, extract_candidates, filter_image, ExtractionContext, PatchFeature, PhotoFrame,
    PhotometricFactor,
};
use crate::smoother::{
    gauge_sigma, BiasWalkFactor, Factor, FactorWindow, GeometricScanFactor, GravityPrior, ImuFactor,
    PhotometricScanFactor, StatePrior,
};

/// Wall-clock milliseconds per stage.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StageTimes {
    pub propagate: f64,
    pub deskew: f64,
    pub geometric: f64,
    pub photometric: f64,
    pub optimize: f64,
    pub features: f64,
    pub marginalize: f64,
    pub map: f64,
}

/// One line of the diagnostics stream.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ScanDiagnostics {
    pub scan: usize,
    pub stamp: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub correspondences: usize,
    pub eigenvalues: [f64; 3],
    pub degenerate_directions: usize,
    pub tracked_features: usize,
    pub new_features: usize,
    pub live_features: usize,
    pub window_states: usize,
    pub map_points: usize,
    pub map_updated: bool,
    pub ms: StageTimes,
}

#[derive(Clone, Debug)]
pub struct ScanOutput {
    pub stamp: f64,
    pub pose: Pose,
    pub diagnostics: ScanDiagnostics,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Odometry state across scans.
pub struct Pipeline {
    pub config: Config,
    t_il: Pose,
    noise: ImuNoise,
    imu: Vec<ImuSample>,
    init: Option<(NavState, GravityDir)>,
    window: Option<FactorWindow>,
    map: Arc<VoxelGeoMap>,
    features: Vec<PatchFeature>,
    next_feature: u64,
    scans: usize,
}

impl Pipeline {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let noise =
            ImuNoise::new(config.imu.gyro_noise, config.imu.accel_noise, config.imu.gyro_walk, config.imu.accel_walk)?;
        Ok(Self {
            t_il: config.extrinsic.pose(),
            noise,
            map: Arc::new(VoxelGeoMap::new(&config.geo)),
            config,
            imu: Vec::new(),
            init: None,
            window: None,
            features: Vec::new(),
            next_feature: 0,
            scans: 0,
        })
    }

    pub fn push_imu(&mut self, samples: &[ImuSample]) -> Result<()> {
        for s in samples {
            if let Some(last) = self.imu.last() {
                if !(s.stamp > last.stamp) {
                    return Err(Error::NonMonotonicStamp { stamp: s.stamp, last: last.stamp });
                }
            }
            self.imu.push(*s);
        }
        Ok(())
    }

    /// Overrides the static initialization.
    pub fn initialize_with(&mut self, state: NavState, gravity: GravityDir) {
        self.init = Some((state, gravity));
    }

    /// Static initialization from the buffered IMU samples.
    pub fn initialize(&mut self) -> Result<(NavState, GravityDir)> {
        if let Some(i) = self.init {
            return Ok(i);
        }
        let c = &self.config.imu;
        let i = initialize_static(&self.imu, c.init_duration_s, c.gravity, c.init_max_gyro_std)?;
        self.init = Some(i);
        Ok(i)
    }

    pub fn window(&self) -> Option<&FactorWindow> {
        self.window.as_ref()
    }

    pub fn map(&self) -> &VoxelGeoMap {
        &self.map
    }

    pub fn features(&self) -> &[PatchFeature] {
        &self.features
    }

    pub fn gravity(&self) -> Option<GravityDir> {
        self.window.as_ref().map(|w| w.values.gravity).or(self.init.map(|i| i.1))
    }

    /// Processes one scan. Scans that start before initialization completes
    /// are skipped and yield `None`.
    pub fn process_scan(&mut self, scan: &LidarScan) -> Result<Option<ScanOutput>> {
        scan.validate()?;
        let (x_init, g_init) = self.initialize()?;
        if scan.start_time < x_init.stamp {
            return Ok(None);
        }
        let index = self.scans;
        self.scans += 1;
        let mut diag = ScanDiagnostics { scan: index, stamp: scan.end_time, ..Default::default() };
        let gravity = self.config.imu.gravity;

        let t = Instant::now();
        let (prev_id, x_prev, g_hat) = match &self.window {
            Some(w) => {
                let (id, x) = w.newest();
                (Some(id), *x, w.values.gravity)
            }
            None => (None, x_init, g_init),
        };
        let mut query: Vec<f64> = (0..scan.cols()).map(|c| scan.column_time(c).max(x_prev.stamp)).collect();
        query.push(scan.end_time);
        let states = propagate_sequence(&x_prev, &g_hat, &self.imu, &query, gravity)?;
        let predicted = states[scan.cols()];
        diag.ms.propagate = ms(t);

        let t = Instant::now();
        let column_poses: Vec<Pose> = states[..scan.cols()].iter().map(|s| s.pose).collect();
        let (cloud, table) = deskew(scan, &column_poses, &predicted.pose, &self.t_il)?;
        let full: Vec<Vector3<f64>> = cloud.valid_points().copied().collect();
        let points = subsample(&full, &self.config.geo);
        diag.ms.deskew = ms(t);

        if self.window.is_none() {
            return self.start(scan, index, predicted, g_hat, &cloud, &full, &points, table, diag).map(Some);
        }

        let t = Instant::now();
        let mut cache = Vec::new();
        let geo = if self.config.geo.enabled {
            match GeometricFactor::build_cached(&points, &predicted.pose, &self.map, &self.config.geo, &mut cache) {
                Ok(f) => Some(f),
                Err(Error::DegenerateScan { found, required }) => {
                    log::warn!("scan {index}: {found} correspondences (< {required}), geometric factor skipped");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let local = match &geo {
            Some(f) => analyze_localizability(f, &predicted.pose, self.config.geo.degeneracy_threshold),
            None => Localizability::none(),
        };
        diag.correspondences = geo.as_ref().map_or(0, |f| f.correspondences.len());
        diag.ms.geometric = ms(t);

        let t = Instant::now();
        let frame = self.frame(scan, index, table);
        let photo = frame
            .as_ref()
            .map(|fr| PhotometricFactor::build(&self.features, fr.clone(), &predicted.pose, &self.config.photo).0);
        diag.ms.photometric = ms(t);

        let window = self.window.as_mut().expect("window started");
        let prev_id = prev_id.expect("window started");
        let id = window.next_id();
        let segments = imu_segments(&self.imu, x_prev.stamp, scan.end_time)?;
        let mut factors: Vec<Box<dyn Factor>> = vec![
            Box::new(ImuFactor::new(prev_id, id, segments, &x_prev, &self.noise, gravity)?),
            Box::new(BiasWalkFactor { i: prev_id, j: id, dt: scan.end_time - x_prev.stamp, noise: self.noise }),
        ];
        if let Some(f) = geo {
            factors.push(Box::new(GeometricScanFactor {
                id,
                factor: f,
                points,
                map: Some(self.map.clone()),
                config: self.config.geo.clone(),
                cache,
            }));
        }
        if let Some(f) = photo {
            factors.push(Box::new(PhotometricScanFactor {
                id,
                factor: f,
                features: Some((self.features.clone(), self.config.photo.clone())),
            }));
        }
        window.add_scan(predicted, factors)?;

        let t = Instant::now();
        let report = window.optimize()?;
        diag.initial_cost = report.initial_cost;
        diag.final_cost = report.final_cost;
        diag.iterations = report.iterations;
        if !self.config.opt.refresh_all {
            window.freeze_state(id);
        }
        let pose = window.values.state(id).pose;
        diag.ms.optimize = ms(t);

        let t = Instant::now();
        if let Some(fr) = &frame {
            let (_, statuses) = PhotometricFactor::build(&self.features, fr.clone(), &pose, &self.config.photo);
            for (fid, s) in statuses {
                if let Some(f) = self.features.iter_mut().find(|f| f.id == fid) {
                    f.alive = s.is_tracked();
                }
            }
            self.features.retain(|f| f.alive);
            diag.tracked_features = self.features.len();
            diag.new_features = self.extract(fr, &cloud, &pose, &local);
        }
        diag.live_features = self.features.len();
        diag.eigenvalues = local.eigenvalues.into();
        diag.degenerate_directions = local.degenerate_count();
        diag.ms.features = ms(t);

        let t = Instant::now();
        let window = self.window.as_mut().expect("window started");
        window.marginalize(scan.end_time - window.length);
        diag.window_states = window.len();
        diag.ms.marginalize = ms(t);

        let t = Instant::now();
        if self.config.geo.enabled {
            diag.map_updated = maybe_update_map(Arc::make_mut(&mut self.map), &pose, &full, &self.config.map);
        }
        diag.map_points = self.map.len();
        diag.ms.map = ms(t);
        Ok(ScanOutput { stamp: scan.end_time, pose, diagnostics: diag }.into())
    }

    /// First scan: seeds the window, the map and the features.
    #[allow(clippy::too_many_arguments)]
    fn start(
        &mut self,
        scan: &LidarScan,
        index: usize,
        x0: NavState,
        g_hat: GravityDir,
        cloud: &crate::geometric::DeskewedCloud,
        full: &[Vector3<f64>],
        points: &[Vector3<f64>],
        table: crate::geometric::DeskewTable,
        mut diag: ScanDiagnostics,
    ) -> Result<ScanOutput> {
        let mut window = FactorWindow::new(x0, g_hat, self.config.opt.clone(), self.config.window.length_s);
        window.add_factor(Box::new(StatePrior { id: 0, mean: x0, sigma: gauge_sigma() }))?;
        window.add_factor(Box::new(GravityPrior { mean: g_hat, sigma: 0.2 }))?;
        self.window = Some(window);
        let t = Instant::now();
        let map = Arc::make_mut(&mut self.map);
        map.insert(&x0.pose, full);
        let local = if self.config.geo.enabled {
            GeometricFactor::build(points, &x0.pose, map, &self.config.geo)
                .map(|f| analyze_localizability(&f, &x0.pose, self.config.geo.degeneracy_threshold))
                .unwrap_or_else(|_| Localizability::none())
        } else {
            Localizability::none()
        };
        diag.ms.geometric = ms(t);
        let t = Instant::now();
        if let Some(fr) = self.frame(scan, index, table) {
            diag.new_features = self.extract(&fr, cloud, &x0.pose, &local);
        }
        diag.ms.features = ms(t);
        diag.live_features = self.features.len();
        diag.eigenvalues = local.eigenvalues.into();
        diag.degenerate_directions = local.degenerate_count();
        diag.window_states = 1;
        diag.map_points = self.map.len();
        diag.map_updated = true;
        Ok(ScanOutput { stamp: scan.end_time, pose: x0.pose, diagnostics: diag })
    }

    fn frame(&self, scan: &LidarScan, index: usize, table: crate::geometric::DeskewTable) -> Option<PhotoFrame> {
        if !self.config.photo.enabled {
            return None;
        }
        let image = filter_image(&build_image(scan), &self.config.photo);
        Some(PhotoFrame {
            id: index as u64,
            image: Arc::new(image),
            lut: Arc::new(build_bias_lut(scan)),
            intrinsics: Arc::new(scan.intrinsics.clone()),
            deskew: Arc::new(table),
            t_il: self.t_il,
        })
    }

    /// Adds features along the degenerate directions; returns how many.
    fn extract(
        &mut self,
        frame: &PhotoFrame,
        cloud: &crate::geometric::DeskewedCloud,
        pose: &Pose,
        local: &Localizability,
    ) -> usize {
        let cfg = &self.config.photo;
        let room = cfg.max_features.saturating_sub(self.features.len());
        let directions = local.degenerate_directions();
        if room == 0 || directions.is_empty() {
            return 0;
        }
        let occupied: Vec<(f64, f64)> = self
            .features
            .iter()
            .filter_map(|f| {
                let c = f.points[f.points.len() / 2];
                frame.project_world(pose, &c).ok().map(|(_, _, p)| (p.u, p.v))
            })
            .collect();
        let ctx = ExtractionContext { frame, cloud, pose, directions: &directions, occupied: &occupied };
        let mut added = 0;
        for c in extract_candidates(&ctx, cfg.features_per_direction, cfg).into_iter().take(room) {
            let mut f = c.feature;
            f.id = self.next_feature;
            self.next_feature += 1;
            self.features.push(f);
            added += 1;
        }
        added
    }
}
