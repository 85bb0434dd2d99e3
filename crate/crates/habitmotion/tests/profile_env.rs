//! Alone in its own binary: it changes the process environment.

use habitmotion::config::{Profile, RunConfig, PROFILE_ENV};

#[test]
fn environment_selects_the_profile_below_file_and_flag() {
    std::env::set_var(PROFILE_ENV, "paper");
    assert_eq!(RunConfig::resolve(None, None).unwrap().profile, Profile::Paper);
    assert_eq!(RunConfig::from_toml("", None).unwrap().profile, Profile::Paper);
    assert_eq!(RunConfig::from_toml("profile = \"desk\"", None).unwrap().profile, Profile::Desk);
    assert_eq!(RunConfig::resolve(None, Some(Profile::Desk)).unwrap().profile, Profile::Desk);

    std::env::set_var(PROFILE_ENV, "enormous");
    assert_eq!(RunConfig::resolve(None, None).unwrap_err().exit_code(), 1);
    assert_eq!(RunConfig::from_toml("profile = \"desk\"", None).unwrap().profile, Profile::Desk);

    std::env::remove_var(PROFILE_ENV);
    assert_eq!(RunConfig::resolve(None, None).unwrap().profile, Profile::Desk);
}
