//! Turn two GNSS fixes and two route points into robot-frame targets and a
//! turn command.

use seqnav::geodesy::*;

fn main() -> Result<(), GeoError> {
    let ell = Ellipsoid::WGS84;
    let prev = GeoFix::new(35.00000, 137.00000)?;
    let curr = GeoFix::new(35.00001, 137.00001)?;

    let beta = bearing(prev, curr)?;
    let speed = velocity_from_fixes(prev, curr, 1.0, &ell)?;
    println!("heading {:.2} deg, speed {:.3} m/s", beta.radians().to_degrees(), speed);

    let radii = curvature_radii(curr.lat_rad(), &ell);
    println!("C_m {:.1} m, C_e {:.1} m", radii.meridional, radii.prime_vertical);

    // route points 5 m and 10 m due north of the robot
    let p1 = offset_fix(curr, 0.0, 5.0, &ell)?;
    let p2 = offset_fix(curr, 0.0, 10.0, &ell)?;
    let (l1, l2) = (global_to_local(p1, curr, beta, &ell), global_to_local(p2, curr, beta, &ell));
    println!("p1 ({:.2}, {:.2})  p2 ({:.2}, {:.2})", l1.x, l1.y, l2.x, l2.y);

    let th = CommandThresholds::default();
    let cmd = classify_command(l1, l2, th.tau1, th.tau2);
    println!("command {} (conflict {})", cmd.command.as_str(), cmd.conflict);

    let back = local_to_global(l2, curr, beta, &ell)?;
    println!("round trip error {:.2e} m", great_circle_distance(back, p2, &ell));
    Ok(())
}
